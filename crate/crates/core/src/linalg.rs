//! Dense matrices and a rank-revealing least-squares solver.
//!
//! The solver is a Householder QR with column pivoting applied to
//! unit-norm-scaled columns. A column whose remaining norm, after projecting
//! out the columns already chosen, falls to the threshold or below is
//! reported as dependent.

use std::fmt;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = 1.0;
        }
        m
    }

    /// Panics when rows have unequal lengths.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            assert_eq!(r.as_ref().len(), ncols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            nrows: rows.len(),
            ncols,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|k| self[(k, k)]).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.ncols);
        self.rows().map(|r| dot(r, v)).collect()
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.ncols, other.nrows);
        let mut out = Matrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let dst = out.row_mut(i);
                for (d, b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Columns `cols` in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.nrows, cols.len());
        for i in 0..self.nrows {
            for (k, &c) in cols.iter().enumerate() {
                out[(i, k)] = self[(i, c)];
            }
        }
        out
    }

    /// Horizontal concatenation.
    pub fn hstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.nrows, other.nrows);
        let mut out = Matrix::zeros(self.nrows, self.ncols + other.ncols);
        for i in 0..self.nrows {
            let dst = out.row_mut(i);
            dst[..self.ncols].copy_from_slice(self.row(i));
            dst[self.ncols..].copy_from_slice(other.row(i));
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.nrows, self.ncols)?;
        for r in self.rows() {
            writeln!(f, "  {r:?}")?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Default threshold on the remaining norm of a unit-scaled column.
pub const RANK_TOL: f64 = 1e-10;

/// Column-pivoted Householder QR of a tall matrix.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    n: usize,
    p: usize,
    /// Column-major working storage; `r` occupies the upper triangle.
    cols: Vec<Vec<f64>>,
    /// Householder vectors, `vs[k]` acting on rows `k..n`.
    vs: Vec<Vec<f64>>,
    betas: Vec<f64>,
    /// `perm[k]` is the original column at pivot position `k`.
    perm: Vec<usize>,
    scale: Vec<f64>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &Matrix, tol: f64) -> Self {
        let (n, p) = (a.nrows(), a.ncols());
        let mut cols: Vec<Vec<f64>> = (0..p).map(|j| a.column(j)).collect();
        let scale: Vec<f64> = cols
            .iter_mut()
            .map(|c| {
                let s = norm(c);
                if s > 0.0 {
                    c.iter_mut().for_each(|x| *x /= s);
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut vs = Vec::with_capacity(p);
        let mut betas = Vec::with_capacity(p);
        let mut rank = 0;

        for k in 0..p.min(n) {
            let (best, best_norm) = (k..p)
                .map(|j| (j, norm(&cols[j][k..])))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best_norm <= tol {
                break;
            }
            cols.swap(k, best);
            perm.swap(k, best);

            let x = &cols[k][k..];
            let alpha = if x[0] >= 0.0 { -best_norm } else { best_norm };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vtv = dot(&v, &v);
            let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
            for col in cols.iter_mut().skip(k + 1) {
                let s = beta * dot(&v, &col[k..]);
                if s != 0.0 {
                    for (c, vi) in col[k..].iter_mut().zip(&v) {
                        *c -= s * vi;
                    }
                }
            }
            let ck = &mut cols[k];
            ck[k] = alpha;
            ck[k + 1..].iter_mut().for_each(|c| *c = 0.0);
            vs.push(v);
            betas.push(beta);
            rank += 1;
        }

        Self {
            n,
            p,
            cols,
            vs,
            betas,
            perm,
            scale,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.p
    }

    /// Original indices of columns left unpivoted, ascending.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut d = self.perm[self.rank..].to_vec();
        d.sort_unstable();
        d
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.cols[j][i]
    }

    /// Least-squares solution of `A x ≈ b`; dependent columns get zero.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut qtb = b.to_vec();
        for (k, (v, beta)) in self.vs.iter().zip(&self.betas).enumerate() {
            let s = beta * dot(v, &qtb[k..]);
            for (q, vi) in qtb[k..].iter_mut().zip(v) {
                *q -= s * vi;
            }
        }
        let r = self.rank;
        let mut z = vec![0.0; r];
        for i in (0..r).rev() {
            let mut acc = qtb[i];
            for (j, zj) in z.iter().enumerate().skip(i + 1) {
                acc -= self.r(i, j) * zj;
            }
            z[i] = acc / self.r(i, i);
        }
        let mut x = vec![0.0; self.p];
        for (k, zk) in z.into_iter().enumerate() {
            let c = self.perm[k];
            x[c] = zk / self.scale[c];
        }
        x
    }

    /// `(AᵀA)⁻¹` in the original column order. Requires full rank.
    pub fn inverse_gram(&self) -> Option<Matrix> {
        if !self.is_full_rank() {
            return None;
        }
        let p = self.p;
        // Upper-triangular inverse of R by back substitution, column by column.
        let mut rinv = Matrix::zeros(p, p);
        for j in 0..p {
            rinv[(j, j)] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut acc = 0.0;
                for k in i + 1..=j {
                    acc += self.r(i, k) * rinv[(k, j)];
                }
                rinv[(i, j)] = -acc / self.r(i, i);
            }
        }
        let mut out = Matrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let s: f64 = (b..p).map(|k| rinv[(a, k)] * rinv[(b, k)]).sum();
                let (ca, cb) = (self.perm[a], self.perm[b]);
                let v = s / (self.scale[ca] * self.scale[cb]);
                out[(ca, cb)] = v;
                out[(cb, ca)] = v;
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn solves_overdetermined_line() {
        // y = 1 + 2x exactly
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]);
        let qr = PivotedQr::new(&a, RANK_TOL);
        assert_eq!(qr.rank(), 2);
        let x = qr.solve(&[1.0, 3.0, 5.0, 7.0]);
        assert!(approx(x[0], 1.0, 1e-12) && approx(x[1], 2.0, 1e-12));
    }

    #[test]
    fn inverse_gram_matches_closed_form() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]);
        // AᵀA = [[3,3],[3,5]], inverse = [[5,-3],[-3,3]]/6
        let g = PivotedQr::new(&a, RANK_TOL).inverse_gram().unwrap();
        assert!(approx(g[(0, 0)], 5.0 / 6.0, 1e-12));
        assert!(approx(g[(0, 1)], -0.5, 1e-12));
        assert!(approx(g[(1, 1)], 0.5, 1e-12));
    }

    #[test]
    fn detects_dependent_column() {
        let a = Matrix::from_rows(&[
            [1.0, 2.0, 0.0, 3.0],
            [1.0, 2.0, 1.0, 4.0],
            [1.0, 2.0, 2.0, 1.0],
            [1.0, 2.0, 3.0, 0.0],
        ]);
        let qr = PivotedQr::new(&a, RANK_TOL);
        assert_eq!(qr.rank(), 3);
        assert_eq!(qr.dependent_columns(), vec![1]);
        assert!(qr.inverse_gram().is_none());
    }

    #[test]
    fn zero_column_is_dependent() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]);
        let qr = PivotedQr::new(&a, RANK_TOL);
        assert_eq!(qr.dependent_columns(), vec![1]);
    }

    #[test]
    fn badly_scaled_columns_are_fine() {
        let rows: Vec<[f64; 3]> = (0..30)
            .map(|k| {
                let t = k as f64;
                [1.0, 1e4 * t, 1e-4 * t * t]
            })
            .collect();
        let a = Matrix::from_rows(&rows);
        let b: Vec<f64> = (0..30)
            .map(|k| {
                let t = k as f64;
                3.0 - 2e-4 * (1e4 * t) + 5e3 * (1e-4 * t * t)
            })
            .collect();
        let x = PivotedQr::new(&a, RANK_TOL).solve(&b);
        assert!(approx(x[0], 3.0, 1e-9));
        assert!(approx(x[1], -2e-4, 1e-9));
        assert!(approx(x[2], 5e3, 1e-9));
    }
}
