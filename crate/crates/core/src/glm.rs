//! Over-dispersed Poisson GLM with log link, fitted by IRLS.
//!
//! Rows with zero prior weight stay in the design so that fitted means are
//! available for them, but they take no part in the score equations, the
//! Pearson statistic or the effective sample size.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use thiserror::Error;

use crate::design::Design;
use crate::linalg::{Matrix, PivotedQr, RANK_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no effective observations (all weights are zero)")]
    NoEffectiveObservations,
    #[error("effective sample size {n_eff} does not exceed the number of terms {p}")]
    TooFewObservations { n_eff: usize, p: usize },
    #[error("design is rank deficient; dependent term(s): {}", .terms.join(", "))]
    RankDeficient { terms: Vec<String> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid response or weight at row {0}")]
    InvalidData(usize),
    #[error("linear predictor overflowed during IRLS")]
    Diverged,
    #[error("dispersion must be at least 1, got {0}")]
    Dispersion(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Bound on `|ΔD| / (|D| + 0.1)` between successive iterations.
    pub tol: f64,
    pub rank_tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            rank_tol: RANK_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// `φ (XᵀWX)⁻¹` at convergence.
    pub covariance: Matrix,
    pub dispersion: f64,
    /// Fitted means for every row, zero-weight rows included.
    pub fitted: Vec<f64>,
    pub deviance: f64,
    pub pearson: f64,
    pub iterations: usize,
    pub converged: bool,
    pub effective_n: usize,
    pub p: usize,
    /// Relative deviance change per iteration, first entry for iteration 2.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn std_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.coefficients[k])
    }

    pub fn df_residual(&self) -> usize {
        self.effective_n - self.p
    }
}

/// Unit Poisson deviance contribution `y ln(y/μ) − (y − μ)`, doubled.
fn unit_deviance(y: f64, mu: f64) -> f64 {
    let ylog = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    2.0 * (ylog - (y - mu))
}

fn check_inputs(x: &Matrix, y: &[f64], w: &[f64]) -> Result<(), FitError> {
    if y.len() != x.nrows() || w.len() != x.nrows() {
        return Err(FitError::Dimension(format!(
            "{} rows in design, {} responses, {} weights",
            x.nrows(),
            y.len(),
            w.len()
        )));
    }
    for (r, (&yi, &wi)) in y.iter().zip(w).enumerate() {
        if !(yi.is_finite() && yi >= 0.0 && wi.is_finite() && wi >= 0.0) {
            return Err(FitError::InvalidData(r));
        }
    }
    Ok(())
}

/// Fits `log μ = Xβ` to counts `y` with prior weights `w`.
pub fn fit_odp(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    names: &[String],
    opts: &IrlsOptions,
) -> Result<FitResult, FitError> {
    check_inputs(x, y, w)?;
    let p = x.ncols();
    if names.len() != p {
        return Err(FitError::Dimension(format!(
            "{} names for {p} columns",
            names.len()
        )));
    }
    let active: Vec<usize> = (0..y.len()).filter(|&r| w[r] > 0.0).collect();
    let n_eff = active.len();
    if n_eff == 0 {
        return Err(FitError::NoEffectiveObservations);
    }
    if n_eff <= p {
        return Err(FitError::TooFewObservations { n_eff, p });
    }

    let mut mu: Vec<f64> = active.iter().map(|&r| y[r] + 0.5).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta = vec![0.0; p];
    let mut prev_dev: Option<f64> = None;
    let mut deviance = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut qr = None;

    for it in 1..=opts.max_iter {
        iterations = it;
        let mut a = Matrix::zeros(n_eff, p);
        let mut z = vec![0.0; n_eff];
        for (k, &r) in active.iter().enumerate() {
            let sw = (w[r] * mu[k]).sqrt();
            for (dst, src) in a.row_mut(k).iter_mut().zip(x.row(r)) {
                *dst = sw * src;
            }
            z[k] = sw * (eta[k] + (y[r] - mu[k]) / mu[k]);
        }
        let f = PivotedQr::new(&a, opts.rank_tol);
        if !f.is_full_rank() {
            return Err(FitError::RankDeficient {
                terms: f
                    .dependent_columns()
                    .into_iter()
                    .map(|c| names[c].clone())
                    .collect(),
            });
        }
        beta = f.solve(&z);
        qr = Some(f);
        for (k, &r) in active.iter().enumerate() {
            eta[k] = crate::linalg::dot(x.row(r), &beta);
            mu[k] = eta[k].exp();
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(FitError::Diverged);
        }
        deviance = active
            .iter()
            .zip(&mu)
            .map(|(&r, &m)| w[r] * unit_deviance(y[r], m))
            .sum();
        if let Some(prev) = prev_dev {
            let rel = (deviance - prev).abs() / (deviance.abs() + 0.1);
            history.push(rel);
            if rel <= opts.tol {
                converged = true;
                break;
            }
        }
        prev_dev = Some(deviance);
    }

    let pearson: f64 = active
        .iter()
        .zip(&mu)
        .map(|(&r, &m)| w[r] * (y[r] - m).powi(2) / m)
        .sum();
    let dispersion = pearson / (n_eff - p) as f64;
    let mut covariance = qr
        .expect("at least one iteration")
        .inverse_gram()
        .expect("full rank checked");
    // The last factorisation used the weights that produced `beta`; refresh
    // it at the final means so the covariance matches the reported fit.
    let mut a = Matrix::zeros(n_eff, p);
    for (k, &r) in active.iter().enumerate() {
        let sw = (w[r] * mu[k]).sqrt();
        for (dst, src) in a.row_mut(k).iter_mut().zip(x.row(r)) {
            *dst = sw * src;
        }
    }
    if let Some(g) = PivotedQr::new(&a, opts.rank_tol).inverse_gram() {
        covariance = g;
    }
    for r in 0..p {
        for c in 0..p {
            covariance[(r, c)] *= dispersion;
        }
    }

    Ok(FitResult {
        names: names.to_vec(),
        fitted: predict(&beta, x)?,
        coefficients: beta,
        covariance,
        dispersion,
        deviance,
        pearson,
        iterations,
        converged,
        effective_n: n_eff,
        p,
        history,
    })
}

/// Convenience wrapper over a built design.
pub fn fit_design(design: &Design, opts: &IrlsOptions) -> Result<FitResult, FitError> {
    fit_odp(&design.x, &design.y, &design.w, &design.names, opts)
}

/// `exp(Xβ)` row by row.
pub fn predict(coefficients: &[f64], x: &Matrix) -> Result<Vec<f64>, FitError> {
    if coefficients.len() != x.ncols() {
        return Err(FitError::Dimension(format!(
            "{} coefficients for {} columns",
            coefficients.len(),
            x.ncols()
        )));
    }
    Ok(x.rows()
        .map(|r| crate::linalg::dot(r, coefficients).exp())
        .collect())
}

/// Signed square-root deviance contributions; zero where the weight is zero.
pub fn deviance_residuals(fitted: &[f64], y: &[f64], w: &[f64]) -> Vec<f64> {
    fitted
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&mu, &yi), &wi)| {
            if wi <= 0.0 {
                return 0.0;
            }
            let d = (wi * unit_deviance(yi, mu)).max(0.0).sqrt();
            if yi > mu {
                d
            } else if yi < mu {
                -d
            } else {
                0.0
            }
        })
        .collect()
}

/// Draws counts with mean `exp(Xβ)` and variance `φ μ`: Poisson when
/// `φ = 1`, otherwise a gamma-mixed Poisson (negative binomial).
pub fn simulate_from_model(
    coefficients: &[f64],
    x: &Matrix,
    dispersion: f64,
    seed: u64,
) -> Result<Vec<u64>, FitError> {
    if !(dispersion >= 1.0) || !dispersion.is_finite() {
        return Err(FitError::Dispersion(dispersion));
    }
    let mu = predict(coefficients, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let excess = dispersion - 1.0;
    Ok(mu
        .into_iter()
        .map(|m| {
            let lambda = if excess > 0.0 && m > 0.0 {
                Gamma::new(m / excess, excess)
                    .map(|g| g.sample(&mut rng))
                    .unwrap_or(m)
            } else {
                m
            };
            if lambda > 0.0 && lambda.is_finite() {
                Poisson::new(lambda).map_or(0, |d| d.sample(&mut rng) as u64)
            } else {
                0
            }
        })
        .collect())
}

/// Writes the coefficient table with a summary header line:
/// `# dispersion=… deviance=… iterations=… converged=… effective_n=… p=…`
/// followed by `term,estimate,std_error` rows.
pub fn write_fit<W: Write>(mut out: W, fit: &FitResult) -> std::io::Result<()> {
    writeln!(
        out,
        "# dispersion={} deviance={} iterations={} converged={} effective_n={} p={}",
        fit.dispersion, fit.deviance, fit.iterations, fit.converged, fit.effective_n, fit.p
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "estimate", "std_error"])?;
    for ((name, b), se) in fit.names.iter().zip(&fit.coefficients).zip(fit.std_errors()) {
        w.write_record([name.clone(), b.to_string(), se.to_string()])?;
    }
    w.flush()
}

/// Summary values recovered from a coefficient file header.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub dispersion: Option<f64>,
    pub coefficients: Vec<(String, f64)>,
}

/// Reads a file written by [`write_fit`], or any `term,estimate` table.
pub fn read_fit<R: BufRead>(mut reader: R) -> Result<FitSummary, std::io::Error> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let dispersion = text
        .lines()
        .filter(|l| l.starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .find_map(|kv| kv.strip_prefix("dispersion=")?.parse().ok());
    let coefficients = crate::design::read_coefficients(text.as_bytes())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    Ok(FitSummary {
        dispersion,
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|k| format!("b{k}")).collect()
    }

    #[test]
    fn intercept_only_is_log_mean() {
        let x = Matrix::from_rows(&[[1.0], [1.0], [1.0]]);
        let fit = fit_odp(&x, &[2.0, 4.0, 6.0], &[1.0; 3], &names(1), &Default::default()).unwrap();
        assert!((fit.coefficients[0] - 4f64.ln()).abs() < 1e-9);
        assert!(fit.fitted.iter().all(|m| (m - 4.0).abs() < 1e-8));
        assert!(fit.converged);
        // Pearson: (4 + 0 + 4) / 4 / (3 - 1)
        assert!((fit.dispersion - 1.0).abs() < 1e-8);
    }

    #[test]
    fn zero_weight_rows_do_not_count() {
        let x = Matrix::from_rows(&[[1.0], [1.0], [1.0], [1.0]]);
        let y = [2.0, 4.0, 6.0, 1000.0];
        let fit = fit_odp(&x, &y, &[1.0, 1.0, 1.0, 0.0], &names(1), &Default::default()).unwrap();
        assert_eq!(fit.effective_n, 3);
        assert!((fit.fitted[3] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn rank_deficiency_names_term() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        let err = fit_odp(&x, &[1.0, 2.0, 3.0], &[1.0; 3], &names(2), &Default::default())
            .unwrap_err();
        assert_eq!(err, FitError::RankDeficient { terms: vec!["b1".into()] });
    }

    #[test]
    fn too_few_or_no_observations() {
        let x = Matrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(
            fit_odp(&x, &[1.0, 2.0], &[0.0, 0.0], &names(1), &Default::default()).unwrap_err(),
            FitError::NoEffectiveObservations
        );
        assert!(matches!(
            fit_odp(&x, &[1.0, 2.0], &[1.0, 0.0], &names(1), &Default::default()),
            Err(FitError::TooFewObservations { n_eff: 1, p: 1 })
        ));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]);
        let opts = IrlsOptions {
            max_iter: 1,
            ..Default::default()
        };
        let fit = fit_odp(&x, &[1.0, 3.0, 2.0, 8.0], &[1.0; 4], &names(2), &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn predict_examples() {
        let x = Matrix::from_rows(&[[1.0, 3.0], [1.0, -1.0]]);
        assert_eq!(predict(&[0.0, 0.0], &x).unwrap(), vec![1.0, 1.0]);
        let base = predict(&[0.3, 0.1], &x).unwrap();
        let doubled = predict(&[0.3 + 2f64.ln(), 0.1], &x).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            assert!((b / a - 2.0).abs() < 1e-12);
        }
        assert!(predict(&[0.0], &x).is_err());
    }

    #[test]
    fn deviance_residual_examples() {
        let r = deviance_residuals(&[2.0, 3.0, 1.0, 1.0], &[0.0, 3.0, 4.0, 9.0], &[1.0, 1.0, 1.0, 0.0]);
        assert!((r[0] + 2.0).abs() < 1e-12);
        assert_eq!(r[1], 0.0);
        assert!(r[2] > 0.0);
        assert_eq!(r[3], 0.0);
    }

    #[test]
    fn simulation_is_deterministic_and_checked() {
        let x = Matrix::from_rows(&vec![[1.0]; 50]);
        let a = simulate_from_model(&[1.5], &x, 1.3, 42).unwrap();
        let b = simulate_from_model(&[1.5], &x, 1.3, 42).unwrap();
        assert_eq!(a, b);
        assert!(simulate_from_model(&[1.5], &x, 0.9, 42).is_err());
        let tiny = simulate_from_model(&[1e-9f64.ln()], &x, 1.0, 7).unwrap();
        assert!(tiny.iter().all(|&c| c == 0));
    }

    #[test]
    fn poisson_draws_have_right_mean() {
        let n = 100_000;
        let x = Matrix::from_rows(&vec![[1.0]; n]);
        let draws = simulate_from_model(&[5f64.ln()], &x, 1.0, 11).unwrap();
        let mean = draws.iter().sum::<u64>() as f64 / n as f64;
        assert!((mean - 5.0).abs() < 3.0 * (5.0 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn negative_binomial_variance() {
        let n = 100_000;
        let x = Matrix::from_rows(&vec![[1.0]; n]);
        let draws = simulate_from_model(&[10f64.ln()], &x, 2.0, 3).unwrap();
        let mean = draws.iter().sum::<u64>() as f64 / n as f64;
        let var = draws.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 10.0).abs() < 0.1);
        assert!((var / mean - 2.0).abs() < 0.1, "{}", var / mean);
    }

    #[test]
    fn fit_file_round_trip() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]);
        let fit = fit_odp(&x, &[1.0, 3.0, 2.0, 8.0], &[1.0; 4], &names(2), &Default::default()).unwrap();
        let mut buf = Vec::new();
        write_fit(&mut buf, &fit).unwrap();
        let back = read_fit(buf.as_slice()).unwrap();
        assert_eq!(back.dispersion, Some(fit.dispersion));
        assert_eq!(back.coefficients[1], ("b1".to_string(), fit.coefficients[1]));
    }
}
