//! Quantities derived from a fitted model: IBNR projection, development
//! patterns, average reporting delay, frequency indices, growth statistics
//! and break-point trend fits.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::design::{Coords, DesignError, ModelSpec};
use crate::error::ParseError;
use crate::linalg::{Matrix, PivotedQr, RANK_TOL};
use crate::quarter::{Quarter, QuarterRange};
use crate::segment::SegmentKey;
use crate::triangle::{Grid, Triangle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("horizon {horizon} is shorter than the {n_dq} observed development quarters")]
    Horizon { horizon: usize, n_dq: usize },
    #[error(transparent)]
    Coefficients(#[from] DesignError),
    #[error("{0} is outside the projected window")]
    UnknownAq(Quarter),
    #[error("accident quarter {0} has zero ultimate")]
    DegenerateRow(Quarter),
    #[error("base window {0} has no positive mean")]
    BaseWindow(QuarterRange),
    #[error("growth window {window} needs at least two growth rates, has {n}")]
    ShortWindow { window: QuarterRange, n: usize },
    #[error("zero predecessor value before {0}")]
    ZeroPredecessor(Quarter),
    #[error("trend fit needs at least 8 accident quarters spanning {0}")]
    TrendWindow(Quarter),
    #[error("trend design is singular; unidentified term(s): {}", .0.join(", "))]
    TrendSingular(Vec<String>),
    #[error("non-positive value at {0}; logs undefined")]
    NonPositive(Quarter),
}

/// Completed triangle and reserve figures for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub segment: SegmentKey,
    pub aqs: Vec<Quarter>,
    pub horizon: usize,
    /// Model means for every (AQ, DQ ≤ horizon).
    pub fitted: Grid,
    /// Actual counts where observed, model means elsewhere.
    pub completed: Grid,
    /// Number of observed DQs per AQ.
    pub observed: Vec<usize>,
    /// AQs carrying zero weight in the fit.
    pub masked: Vec<bool>,
    pub reported: Vec<f64>,
    pub ibnr: Vec<f64>,
    pub ultimates: Vec<f64>,
}

impl Projection {
    pub fn index_of(&self, aq: Quarter) -> Result<usize, AnalyticsError> {
        self.aqs
            .iter()
            .position(|&q| q == aq)
            .ok_or(AnalyticsError::UnknownAq(aq))
    }

    pub fn ultimate_series(&self) -> Vec<(Quarter, f64)> {
        self.aqs.iter().copied().zip(self.ultimates.iter().copied()).collect()
    }

    pub fn reported_series(&self) -> Vec<(Quarter, f64)> {
        self.aqs.iter().copied().zip(self.reported.iter().copied()).collect()
    }

    /// Model means over the observed cells only, shaped like the triangle.
    pub fn fitted_upper(&self) -> Grid {
        self.fitted
            .iter()
            .zip(&self.observed)
            .map(|(row, &n)| row[..n].to_vec())
            .collect()
    }
}

/// Projects the unobserved cells of `tri` out to `horizon` DQs (default: the
/// observed width) using `coefs` aligned with `spec.terms`. Calendar
/// indicators are evaluated at the literal future quarter, so they only fire
/// inside their own sets.
pub fn project_lower(
    coefs: &[f64],
    spec: &ModelSpec,
    tri: &Triangle,
    epoch: Quarter,
    horizon: Option<usize>,
) -> Result<Projection, AnalyticsError> {
    if coefs.len() != spec.n_terms() {
        return Err(DesignError::CoefficientCount {
            expected: spec.n_terms(),
            got: coefs.len(),
        }
        .into());
    }
    let n_dq = tri.n_dq();
    let horizon = horizon.unwrap_or(n_dq);
    if horizon < n_dq {
        return Err(AnalyticsError::Horizon { horizon, n_dq });
    }
    let weighted = spec.apply_zero_weights(tri);
    let seg = tri.key();
    let n = tri.n_aq();
    let mut out = Projection {
        segment: seg,
        aqs: (1..=n).map(|i| tri.aq(i)).collect(),
        horizon,
        fitted: Vec::with_capacity(n),
        completed: Vec::with_capacity(n),
        observed: Vec::with_capacity(n),
        masked: Vec::with_capacity(n),
        reported: Vec::with_capacity(n),
        ibnr: Vec::with_capacity(n),
        ultimates: Vec::with_capacity(n),
    };
    for i in 1..=n {
        let aq = tri.aq(i);
        let row = tri.row(i).expect("row in range");
        let fitted: Vec<f64> = (1..=horizon)
            .map(|j| {
                let at = Coords::new(aq, i, j, epoch);
                let eta: f64 = spec
                    .design_row(seg, &at)
                    .iter()
                    .zip(coefs)
                    .map(|(x, b)| x * b)
                    .sum();
                eta.exp()
            })
            .collect();
        let completed: Vec<f64> = fitted
            .iter()
            .enumerate()
            .map(|(k, &m)| row.get(k).map_or(m, |c| c.count as f64))
            .collect();
        let reported: f64 = row.iter().map(|c| c.count as f64).sum();
        let ibnr: f64 = fitted[row.len()..].iter().sum();
        out.observed.push(row.len());
        out.masked.push(weighted.is_masked_row(i));
        out.reported.push(reported);
        out.ibnr.push(ibnr);
        out.ultimates.push(reported + ibnr);
        out.fitted.push(fitted);
        out.completed.push(completed);
    }
    Ok(out)
}

/// Which cells a development pattern is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatternSource {
    /// Model means in every cell.
    #[default]
    Fitted,
    /// Actual counts where observed, model means beyond.
    Completed,
}

/// Share of an AQ's breaches reported in each DQ.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCurve {
    pub aq: Quarter,
    /// Incremental proportions `p_j`, summing to one.
    pub p: Vec<f64>,
    /// Cumulative proportions `P_j`, ending at one.
    pub cumulative: Vec<f64>,
}

impl PatternCurve {
    /// Normalises nonnegative incremental values over their length.
    pub fn from_increments(aq: Quarter, values: &[f64]) -> Result<Self, AnalyticsError> {
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(AnalyticsError::DegenerateRow(aq));
        }
        let p: Vec<f64> = values.iter().map(|v| v / total).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self { aq, p, cumulative })
    }

    /// Cumulative share reported within `k` quarters.
    pub fn within(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            k => self.cumulative[k.min(self.cumulative.len()) - 1],
        }
    }
}

pub fn dev_pattern(
    proj: &Projection,
    aq: Quarter,
    source: PatternSource,
) -> Result<PatternCurve, AnalyticsError> {
    let k = proj.index_of(aq)?;
    let row = match source {
        PatternSource::Fitted => &proj.fitted[k],
        PatternSource::Completed => &proj.completed[k],
    };
    PatternCurve::from_increments(aq, row)
}

/// Weight given to development quarter `j` when averaging delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayConvention {
    /// `w(j) = j`
    #[default]
    Dq,
    /// `w(j) = j − 0.5`, mid-quarter reporting.
    DqHalf,
}

impl DelayConvention {
    pub fn weight(self, j: usize) -> f64 {
        match self {
            DelayConvention::Dq => j as f64,
            DelayConvention::DqHalf => j as f64 - 0.5,
        }
    }
}

impl FromStr for DelayConvention {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "dq" => Ok(Self::Dq),
            "dq-half" => Ok(Self::DqHalf),
            other => Err(ParseError::Value {
                what: "delay convention",
                value: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for DelayConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dq => "dq",
            Self::DqHalf => "dq-half",
        })
    }
}

/// `Σ w(j) p_j`, in quarters.
pub fn average_delay(curve: &PatternCurve, convention: DelayConvention) -> f64 {
    curve
        .p
        .iter()
        .enumerate()
        .map(|(k, p)| convention.weight(k + 1) * p)
        .sum()
}

/// Values as a percentage of their mean over `base`.
pub fn freq_index(
    series: &[(Quarter, f64)],
    base: QuarterRange,
) -> Result<Vec<(Quarter, f64)>, AnalyticsError> {
    let in_base: Vec<f64> = series
        .iter()
        .filter(|(q, _)| base.contains(*q))
        .map(|&(_, v)| v)
        .collect();
    let mean = in_base.iter().sum::<f64>() / in_base.len() as f64;
    if in_base.is_empty() || !(mean > 0.0) {
        return Err(AnalyticsError::BaseWindow(base));
    }
    Ok(series.iter().map(|&(q, v)| (q, 100.0 * v / mean)).collect())
}

/// Mean and sample standard deviation of quarter-on-quarter growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthStats {
    pub window: QuarterRange,
    /// Growth rates in the window.
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Growth `100 (u_i / u_{i-1} − 1)` is attributed to quarter `i`; a window
/// collects the rates of the quarters it contains whose predecessor exists.
pub fn growth_stats(
    series: &[(Quarter, f64)],
    windows: &[QuarterRange],
) -> Result<Vec<GrowthStats>, AnalyticsError> {
    windows
        .iter()
        .map(|&window| {
            let mut g = Vec::new();
            for pair in series.windows(2) {
                let ((_, prev), (q, cur)) = (pair[0], pair[1]);
                if !window.contains(q) {
                    continue;
                }
                if prev == 0.0 {
                    return Err(AnalyticsError::ZeroPredecessor(q));
                }
                g.push(100.0 * (cur / prev - 1.0));
            }
            let n = g.len();
            if n < 2 {
                return Err(AnalyticsError::ShortWindow { window, n });
            }
            let mean = g.iter().sum::<f64>() / n as f64;
            let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Ok(GrowthStats {
                window,
                n,
                mean,
                sd: var.sqrt(),
            })
        })
        .collect()
}

/// Two-sided 5% critical value of the standard normal.
pub const Z_CRIT_5PCT: f64 = 1.959_963_984_540_054;

/// Number of coefficients in the break-point trend model.
pub const TREND_TERMS: usize = 7;

/// Break-point trend in log frequency:
/// `α0 + α1 i + α2 i² + α3 1{aq ≥ B} + α4 1{aq = B} + α5 1{aq = B+1} + α6 max(0, aq − (B+1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrendLayout {
    pub break_aq: Quarter,
}

impl Default for TrendLayout {
    fn default() -> Self {
        Self {
            break_aq: Quarter::of(2020, 1),
        }
    }
}

impl TrendLayout {
    pub fn term_names(&self) -> [String; TREND_TERMS] {
        let b = self.break_aq;
        let b1 = b.offset(1);
        [
            "intercept".into(),
            "i".into(),
            "i^2".into(),
            format!("ind_i>={b}"),
            format!("ind_i{{{b}}}"),
            format!("ind_i{{{b1}}}"),
            format!("ramp(i-{b1})"),
        ]
    }

    fn row(&self, i: usize, aq: Quarter) -> [f64; TREND_TERMS] {
        let b = self.break_aq;
        let b1 = b.offset(1);
        let ind = |x: bool| if x { 1.0 } else { 0.0 };
        let t = i as f64;
        [
            1.0,
            t,
            t * t,
            ind(aq >= b),
            ind(aq == b),
            ind(aq == b1),
            aq.since(b1).max(0) as f64,
        ]
    }
}

/// Least-squares fit of the break-point trend on log values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendFit {
    pub layout: TrendLayout,
    pub aqs: Vec<Quarter>,
    pub log_values: Vec<f64>,
    /// Terms kept in the fit; dropped terms have zero coefficient.
    pub included: [bool; TREND_TERMS],
    pub coefficients: [f64; TREND_TERMS],
    pub std_errors: [f64; TREND_TERMS],
    pub z: [f64; TREND_TERMS],
    /// `|z| ≥ 1.96`; always false for dropped terms.
    pub significant: [bool; TREND_TERMS],
    pub residual_variance: f64,
    pub df: usize,
    /// `exp` of the fitted log values.
    pub fitted: Vec<f64>,
}

/// Fits the break-point trend to `series`, AQ index `i` counting from 1 at
/// the first element.
pub fn fit_trend(series: &[(Quarter, f64)], layout: TrendLayout) -> Result<TrendFit, AnalyticsError> {
    let b = layout.break_aq;
    let first = series.first().map(|s| s.0);
    let last = series.last().map(|s| s.0);
    if series.len() < 8 || !(first < Some(b) && Some(b) <= last) {
        return Err(AnalyticsError::TrendWindow(b));
    }
    let log_values = series
        .iter()
        .map(|&(q, v)| if v > 0.0 { Ok(v.ln()) } else { Err(AnalyticsError::NonPositive(q)) })
        .collect::<Result<Vec<_>, _>>()?;
    let aqs: Vec<Quarter> = series.iter().map(|s| s.0).collect();
    fit_trend_subset(layout, aqs, log_values, [true; TREND_TERMS])
}

fn fit_trend_subset(
    layout: TrendLayout,
    aqs: Vec<Quarter>,
    log_values: Vec<f64>,
    included: [bool; TREND_TERMS],
) -> Result<TrendFit, AnalyticsError> {
    let cols: Vec<usize> = (0..TREND_TERMS).filter(|&k| included[k]).collect();
    let rows: Vec<[f64; TREND_TERMS]> = aqs
        .iter()
        .enumerate()
        .map(|(k, &q)| layout.row(k + 1, q))
        .collect();
    let x = Matrix::from_rows(&rows).select_columns(&cols);
    let n = aqs.len();
    let names = layout.term_names();
    if n <= cols.len() {
        return Err(AnalyticsError::TrendWindow(layout.break_aq));
    }
    let qr = PivotedQr::new(&x, RANK_TOL);
    let gram = qr.inverse_gram().ok_or_else(|| {
        AnalyticsError::TrendSingular(
            qr.dependent_columns()
                .into_iter()
                .map(|c| names[cols[c]].clone())
                .collect(),
        )
    })?;
    let beta = qr.solve(&log_values);
    let fitted_log = x.mul_vec(&beta);
    let rss: f64 = log_values
        .iter()
        .zip(&fitted_log)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    let df = n - cols.len();
    let s2 = rss / df as f64;

    let mut fit = TrendFit {
        layout,
        included,
        coefficients: [0.0; TREND_TERMS],
        std_errors: [0.0; TREND_TERMS],
        z: [0.0; TREND_TERMS],
        significant: [false; TREND_TERMS],
        residual_variance: s2,
        df,
        fitted: fitted_log.iter().map(|v| v.exp()).collect(),
        aqs,
        log_values,
    };
    for (k, &c) in cols.iter().enumerate() {
        let se = (s2 * gram[(k, k)]).max(0.0).sqrt();
        let z = if se > 0.0 { beta[k] / se } else { 0.0 };
        fit.coefficients[c] = beta[k];
        fit.std_errors[c] = se;
        fit.z[c] = z;
        fit.significant[c] = z.abs() >= Z_CRIT_5PCT;
    }
    Ok(fit)
}

impl TrendFit {
    /// Refits with the given terms fixed at zero.
    pub fn refit_without(&self, drop: &[usize]) -> Result<TrendFit, AnalyticsError> {
        let mut included = self.included;
        for &k in drop {
            included[k] = false;
        }
        fit_trend_subset(self.layout, self.aqs.clone(), self.log_values.clone(), included)
    }

    /// Drops whichever single-quarter shocks (α4, α5) are insignificant and
    /// refits, re-assessing the level shift and post-break slope. Returns
    /// `self` unchanged when both shocks are significant.
    pub fn prune_quarter_shocks(&self) -> Result<TrendFit, AnalyticsError> {
        let drop: Vec<usize> = [4, 5]
            .into_iter()
            .filter(|&k| self.included[k] && !self.significant[k])
            .collect();
        if drop.is_empty() {
            return Ok(self.clone());
        }
        self.refit_without(&drop)
    }
}

/// Average delay of one AQ under the smooth trend and with exceptional
/// terms included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExceptionDelay {
    pub aq: Quarter,
    pub trend: f64,
    pub with_exceptions: f64,
    /// The AQ carried zero weight; its "with exceptions" delay uses the
    /// completed triangle since the model never saw its experience.
    pub masked: bool,
}

impl ExceptionDelay {
    pub fn delta(&self) -> f64 {
        self.with_exceptions - self.trend
    }
}

/// Compares delays with exception terms (AQ-set and calendar indicators)
/// zeroed against the full model, for each AQ in `aqs`.
pub fn exception_delays(
    coefs: &[f64],
    spec: &ModelSpec,
    tri: &Triangle,
    epoch: Quarter,
    aqs: &[Quarter],
    convention: DelayConvention,
) -> Result<Vec<ExceptionDelay>, AnalyticsError> {
    let full = project_lower(coefs, spec, tri, epoch, None)?;
    let trend = project_lower(&spec.trend_coefficients(coefs), spec, tri, epoch, None)?;
    aqs.iter()
        .map(|&aq| {
            let k = full.index_of(aq)?;
            let masked = full.masked[k];
            let source = if masked {
                PatternSource::Completed
            } else {
                PatternSource::Fitted
            };
            let with = dev_pattern(&full, aq, source)?;
            let base = dev_pattern(&trend, aq, PatternSource::Fitted)?;
            Ok(ExceptionDelay {
                aq,
                trend: average_delay(&base, convention),
                with_exceptions: average_delay(&with, convention),
                masked,
            })
        })
        .collect()
}
