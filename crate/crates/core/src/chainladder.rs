//! Classical chain ladder on cumulative counts.

use thiserror::Error;

use crate::triangle::Triangle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainLadderError {
    #[error("development factor {j} has no rows with positive cumulative count")]
    DegenerateColumn { j: usize },
    #[error("triangle is empty")]
    Empty,
}

/// Age-to-age factors, `factors[j-1]` taking cumulative DQ `j` to `j+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DevFactors {
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClCompletion {
    /// `cumulative[i-1][j-1]` over the full square; upper part is actual.
    pub cumulative: Vec<Vec<f64>>,
    pub latest: Vec<f64>,
    pub ultimates: Vec<f64>,
    pub ibnr: Vec<f64>,
}

fn cumulative_rows(tri: &Triangle) -> Vec<Vec<f64>> {
    (1..=tri.n_aq())
        .map(|i| {
            tri.cumulative_row(i)
                .expect("row in range")
                .into_iter()
                .map(|c| c as f64)
                .collect()
        })
        .collect()
}

/// Volume-weighted factors over rows observed at both `j` and `j+1`. Rows
/// whose cumulative count at `j` is zero carry no information and are left
/// out of both sums.
pub fn dev_factors(tri: &Triangle) -> Result<DevFactors, ChainLadderError> {
    if tri.n_aq() == 0 {
        return Err(ChainLadderError::Empty);
    }
    let cum = cumulative_rows(tri);
    let factors = (1..tri.n_dq())
        .map(|j| {
            let (num, den) = cum
                .iter()
                .filter(|r| r.len() > j && r[j - 1] > 0.0)
                .fold((0.0, 0.0), |(n, d), r| (n + r[j], d + r[j - 1]));
            if den > 0.0 {
                Ok(num / den)
            } else {
                Err(ChainLadderError::DegenerateColumn { j })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DevFactors { factors })
}

/// Completes the lower triangle by rolling each latest diagonal forward.
pub fn cl_complete(tri: &Triangle) -> Result<ClCompletion, ChainLadderError> {
    let f = dev_factors(tri)?;
    let n_dq = tri.n_dq();
    let mut cumulative = cumulative_rows(tri);
    let mut latest = Vec::with_capacity(cumulative.len());
    for row in &mut cumulative {
        let last = *row.last().unwrap_or(&0.0);
        latest.push(last);
        for j in row.len()..n_dq {
            let prev = row[j - 1];
            row.push(prev * f.factors[j - 1]);
        }
    }
    let ultimates: Vec<f64> = cumulative.iter().map(|r| *r.last().unwrap_or(&0.0)).collect();
    let ibnr = ultimates.iter().zip(&latest).map(|(u, l)| u - l).collect();
    Ok(ClCompletion {
        cumulative,
        latest,
        ultimates,
        ibnr,
    })
}
