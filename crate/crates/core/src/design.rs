//! Predictor-term algebra and design-matrix construction.
//!
//! A [`Term`] is one coefficient. Its column value at a row is the sum, over
//! clauses whose segment set contains the row's segment, of the product of
//! the clause's factors. Calendar-anchored factors carry quarter labels, so
//! a shared term lines up across segments whose windows start differently.
//!
//! Models are authored in a line-oriented text format:
//!
//! ```text
//! !aq_index global
//! !zero [CA500] aq 2018Q2,2019Q4
//! CA500 × intercept := [CA500] 1
//! CA500 × log_j_plus_1 × ind_j_le_4 := [CA500] log1p_j * ind_j{1,2,3,4}
//! shared_break := [IN500,ND500] ind_i>=2020Q1 + [ND500] ind_i{2020Q1}
//! ```

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::quarter::Quarter;
use crate::segment::{SegmentKey, SegmentSpec};
use crate::triangle::{Observation, ObservationTable, Selector, Triangle};

/// Accident quarter that maps to global AQ index 1.
pub const DEFAULT_EPOCH: Quarter = Quarter::of(2012, 1);

/// Dispersion printed alongside the published coefficient table.
pub const PUBLISHED_DISPERSION: f64 = 1.3250;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("term name `{0}` is used more than once")]
    DuplicateTerm(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("segment {0} has no intercept term in the model")]
    NoIntercept(SegmentKey),
    #[error("no coefficient supplied for term `{0}`")]
    MissingCoefficient(String),
    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
}

/// How `i` and `i^2` index accident quarters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AqIndexMode {
    /// Offset from the epoch, epoch = 1.
    #[default]
    Global,
    /// Position within the segment window, first AQ = 1.
    PerSegment,
}

/// Where a factor is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coords {
    pub aq: Quarter,
    pub i: usize,
    pub j: usize,
    pub global_i: i64,
}

impl Coords {
    pub fn new(aq: Quarter, i: usize, j: usize, epoch: Quarter) -> Self {
        Self {
            aq,
            i,
            j,
            global_i: aq.since(epoch) + 1,
        }
    }

    pub fn cq(&self) -> Quarter {
        self.aq.offset(self.j as i64 - 1)
    }
}

impl From<&Observation> for Coords {
    fn from(o: &Observation) -> Self {
        Self {
            aq: o.aq,
            i: o.i,
            j: o.j,
            global_i: o.global_i,
        }
    }
}

/// A basis function of (AQ, DQ, CQ).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Factor {
    Constant,
    AqLinear,
    AqSquare,
    DqLinear,
    /// `min(j, k)`
    DqMinCap(u32),
    /// `max(0, j - k)`
    DqRamp(u32),
    /// `max(0, aq - pivot)` in quarters
    AqRampUp(Quarter),
    /// `max(0, pivot - aq)` in quarters
    AqRampDown(Quarter),
    /// `ln(j + 1)`
    LogDq,
    DqSet(Vec<u32>),
    AqSet(Vec<Quarter>),
    AqAtLeast(Quarter),
    CqSet(Vec<Quarter>),
    /// −1 at the first calendar quarter, +1 at the second.
    CqSignedPair(Quarter, Quarter),
}

impl Factor {
    pub fn eval(&self, at: &Coords, mode: AqIndexMode) -> f64 {
        let aq_index = || match mode {
            AqIndexMode::Global => at.global_i as f64,
            AqIndexMode::PerSegment => at.i as f64,
        };
        let j = at.j as i64;
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            Factor::Constant => 1.0,
            Factor::AqLinear => aq_index(),
            Factor::AqSquare => aq_index().powi(2),
            Factor::DqLinear => j as f64,
            Factor::DqMinCap(k) => j.min(i64::from(*k)) as f64,
            Factor::DqRamp(k) => (j - i64::from(*k)).max(0) as f64,
            Factor::AqRampUp(p) => at.aq.since(*p).max(0) as f64,
            Factor::AqRampDown(p) => p.since(at.aq).max(0) as f64,
            Factor::LogDq => ((j + 1) as f64).ln(),
            Factor::DqSet(s) => ind(s.iter().any(|&k| i64::from(k) == j)),
            Factor::AqSet(s) => ind(s.contains(&at.aq)),
            Factor::AqAtLeast(p) => ind(at.aq >= *p),
            Factor::CqSet(s) => ind(s.contains(&at.cq())),
            Factor::CqSignedPair(a, b) => {
                let c = at.cq();
                if c == *a {
                    -1.0
                } else if c == *b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Indicators of specific accident or calendar quarters. Zeroing terms
    /// built from these leaves the smooth trend.
    pub fn is_exception(&self) -> bool {
        matches!(
            self,
            Factor::AqSet(_) | Factor::CqSet(_) | Factor::CqSignedPair(..)
        )
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Constant => f.write_str("1"),
            Factor::AqLinear => f.write_str("i"),
            Factor::AqSquare => f.write_str("i^2"),
            Factor::DqLinear => f.write_str("j"),
            Factor::DqMinCap(k) => write!(f, "min(j,{k})"),
            Factor::DqRamp(k) => write!(f, "ramp(j-{k})"),
            Factor::AqRampUp(p) => write!(f, "ramp(i-{p})"),
            Factor::AqRampDown(p) => write!(f, "ramp({p}-i)"),
            Factor::LogDq => f.write_str("log1p_j"),
            Factor::DqSet(s) => write!(f, "ind_j{{{}}}", join(s)),
            Factor::AqSet(s) => write!(f, "ind_i{{{}}}", join(s)),
            Factor::AqAtLeast(p) => write!(f, "ind_i>={p}"),
            Factor::CqSet(s) => write!(f, "ind_c{{{}}}", join(s)),
            Factor::CqSignedPair(a, b) => write!(f, "sgn_c({a},{b})"),
        }
    }
}

impl FromStr for Factor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || format!("unrecognised factor `{}`", s.trim());
        let quarter = |x: &str| x.parse::<Quarter>().map_err(|e| e.to_string());
        let quarters = |x: &str| -> Result<Vec<Quarter>, String> {
            let v = x.split(',').map(quarter).collect::<Result<Vec<_>, _>>()?;
            if v.is_empty() {
                return Err(bad());
            }
            Ok(v)
        };
        let inner = |prefix: &str, open: char, close: char| -> Option<&str> {
            t.strip_prefix(prefix)?
                .strip_prefix(open)?
                .strip_suffix(close)
        };
        let cap = |x: &str| x.parse::<u32>().map_err(|_| bad());

        match t.as_str() {
            "1" => return Ok(Factor::Constant),
            "i" => return Ok(Factor::AqLinear),
            "i^2" => return Ok(Factor::AqSquare),
            "j" => return Ok(Factor::DqLinear),
            "log1p_j" => return Ok(Factor::LogDq),
            _ => {}
        }
        if let Some(k) = inner("min", '(', ')').and_then(|x| x.strip_prefix("j,")) {
            return Ok(Factor::DqMinCap(cap(k)?));
        }
        if let Some(body) = inner("ramp", '(', ')') {
            if let Some(k) = body.strip_prefix("j-") {
                return Ok(Factor::DqRamp(cap(k)?));
            }
            if let Some(p) = body.strip_prefix("i-") {
                return Ok(Factor::AqRampUp(quarter(p)?));
            }
            if let Some(p) = body.strip_suffix("-i") {
                return Ok(Factor::AqRampDown(quarter(p)?));
            }
            return Err(bad());
        }
        if let Some(p) = t.strip_prefix("ind_i>=") {
            return Ok(Factor::AqAtLeast(quarter(p)?));
        }
        if let Some(body) = inner("ind_j", '{', '}') {
            let v = body.split(',').map(cap).collect::<Result<Vec<_>, _>>()?;
            return Ok(Factor::DqSet(v));
        }
        if let Some(body) = inner("ind_i", '{', '}') {
            return Ok(Factor::AqSet(quarters(body)?));
        }
        if let Some(body) = inner("ind_c", '{', '}') {
            return Ok(Factor::CqSet(quarters(body)?));
        }
        if let Some(body) = inner("sgn_c", '(', ')') {
            let (a, b) = body.split_once(',').ok_or_else(bad)?;
            return Ok(Factor::CqSignedPair(quarter(a)?, quarter(b)?));
        }
        Err(bad())
    }
}

/// A segment-scoped product of factors. An empty factor list is the constant 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub segments: Vec<SegmentKey>,
    pub factors: Vec<Factor>,
}

impl Clause {
    pub fn new(segments: Vec<SegmentKey>, factors: Vec<Factor>) -> Self {
        Self { segments, factors }
    }

    pub fn applies_to(&self, seg: SegmentKey) -> bool {
        self.segments.contains(&seg)
    }

    pub fn is_intercept(&self) -> bool {
        self.factors.iter().all(|f| *f == Factor::Constant)
    }

    pub fn eval(&self, at: &Coords, mode: AqIndexMode) -> f64 {
        self.factors.iter().map(|f| f.eval(at, mode)).product()
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", join(&self.segments))?;
        if self.factors.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self.factors.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" * "))
    }
}

/// One model coefficient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub name: String,
    pub clauses: Vec<Clause>,
}

impl Term {
    pub fn new(name: impl Into<String>, clauses: Vec<Clause>) -> Self {
        Self {
            name: name.into(),
            clauses,
        }
    }

    pub fn value(&self, seg: SegmentKey, at: &Coords, mode: AqIndexMode) -> f64 {
        self.clauses
            .iter()
            .filter(|c| c.applies_to(seg))
            .map(|c| c.eval(at, mode))
            .sum()
    }

    pub fn touches(&self, seg: SegmentKey) -> bool {
        self.clauses.iter().any(|c| c.applies_to(seg))
    }

    pub fn is_exception(&self) -> bool {
        self.clauses
            .iter()
            .any(|c| c.factors.iter().any(Factor::is_exception))
    }
}

/// AQs of the listed segments whose cells get zero weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroWeight {
    pub segments: Vec<SegmentKey>,
    pub aqs: Vec<Quarter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelSpec {
    pub terms: Vec<Term>,
    pub zero_weights: Vec<ZeroWeight>,
    pub aq_index: AqIndexMode,
}

impl ModelSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self, SpecError> {
        let spec = Self {
            terms,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let mut seen = HashSet::new();
        for t in &self.terms {
            if !seen.insert(t.name.as_str()) {
                return Err(SpecError::DuplicateTerm(t.name.clone()));
            }
        }
        Ok(())
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == name)
    }

    /// Zero-weight AQs that apply to `seg`.
    pub fn zero_weight_aqs(&self, seg: SegmentKey) -> Vec<Quarter> {
        let mut out: Vec<Quarter> = self
            .zero_weights
            .iter()
            .filter(|z| z.segments.contains(&seg))
            .flat_map(|z| z.aqs.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Copy of `tri` with this model's zero-weight AQs applied.
    pub fn apply_zero_weights(&self, tri: &Triangle) -> Triangle {
        tri.set_zero_weight(&Selector::Aqs(self.zero_weight_aqs(tri.key())))
    }

    /// The model seen by `segments` only: clauses for other segments are
    /// dropped, and terms left without clauses disappear.
    pub fn restrict_to(&self, segments: &[SegmentKey]) -> ModelSpec {
        let keep = |s: &SegmentKey| segments.contains(s);
        let terms = self
            .terms
            .iter()
            .filter_map(|t| {
                let clauses: Vec<Clause> = t
                    .clauses
                    .iter()
                    .filter_map(|c| {
                        let segs: Vec<SegmentKey> = c.segments.iter().copied().filter(keep).collect();
                        (!segs.is_empty()).then(|| Clause::new(segs, c.factors.clone()))
                    })
                    .collect();
                (!clauses.is_empty()).then(|| Term::new(t.name.clone(), clauses))
            })
            .collect();
        let zero_weights = self
            .zero_weights
            .iter()
            .filter_map(|z| {
                let segs: Vec<SegmentKey> = z.segments.iter().copied().filter(keep).collect();
                (!segs.is_empty()).then(|| ZeroWeight {
                    segments: segs,
                    aqs: z.aqs.clone(),
                })
            })
            .collect();
        ModelSpec {
            terms,
            zero_weights,
            aq_index: self.aq_index,
        }
    }

    /// Row of the design matrix for one cell.
    pub fn design_row(&self, seg: SegmentKey, at: &Coords) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.value(seg, at, self.aq_index))
            .collect()
    }

    /// Copy of `coefs` with exception-term coefficients set to zero.
    pub fn trend_coefficients(&self, coefs: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .zip(coefs)
            .map(|(t, &b)| if t.is_exception() { 0.0 } else { b })
            .collect()
    }

    /// Orders named coefficients to match the term list.
    pub fn align_coefficients(&self, named: &[(String, f64)]) -> Result<Vec<f64>, DesignError> {
        self.terms
            .iter()
            .map(|t| {
                named
                    .iter()
                    .find(|(n, _)| *n == t.name)
                    .map(|(_, b)| *b)
                    .ok_or_else(|| DesignError::MissingCoefficient(t.name.clone()))
            })
            .collect()
    }

    /// Separate parameter for every AQ and every DQ of each segment, the
    /// chain-ladder-equivalent model.
    pub fn cross_classified(segments: &[SegmentSpec]) -> ModelSpec {
        let mut terms = Vec::new();
        for s in segments {
            let k = s.key;
            let n = s.n_aq();
            terms.push(Term::new(
                format!("{k} × intercept"),
                vec![Clause::new(vec![k], vec![Factor::Constant])],
            ));
            for aq in s.window().iter().skip(1) {
                terms.push(Term::new(
                    format!("{k} × ind_i_{aq}"),
                    vec![Clause::new(vec![k], vec![Factor::AqSet(vec![aq])])],
                ));
            }
            for j in 2..=n as u32 {
                terms.push(Term::new(
                    format!("{k} × ind_j_{j}"),
                    vec![Clause::new(vec![k], vec![Factor::DqSet(vec![j])])],
                ));
            }
        }
        ModelSpec {
            terms,
            zero_weights: Vec::new(),
            aq_index: AqIndexMode::PerSegment,
        }
    }
}

fn parse_segments(s: &str) -> Result<Vec<SegmentKey>, String> {
    let v = s
        .split(',')
        .map(|x| x.trim())
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<SegmentKey>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("empty segment set".into());
    }
    Ok(v)
}

/// Splits `[A,B] rest` into the segment list and the remainder.
fn bracketed(s: &str) -> Result<(Vec<SegmentKey>, &str), String> {
    let s = s.trim_start();
    let body = s
        .strip_prefix('[')
        .ok_or_else(|| format!("expected `[segments]` at `{s}`"))?;
    let (inside, rest) = body
        .split_once(']')
        .ok_or_else(|| "unterminated segment list".to_string())?;
    Ok((parse_segments(inside)?, rest))
}

fn parse_clause(s: &str) -> Result<Clause, String> {
    let (segments, rest) = bracketed(s)?;
    let factors = rest
        .split('*')
        .map(str::parse::<Factor>)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Clause::new(segments, factors))
}

fn parse_directive(s: &str, spec: &mut ModelSpec) -> Result<(), String> {
    let mut words = s.splitn(2, char::is_whitespace);
    let head = words.next().unwrap_or("");
    let rest = words.next().unwrap_or("").trim();
    match head {
        "!zero" => {
            let (segments, rest) = bracketed(rest)?;
            let list = rest
                .trim()
                .strip_prefix("aq")
                .ok_or_else(|| "expected `aq` after segment list".to_string())?;
            let aqs = list
                .split(',')
                .map(|q| q.parse::<Quarter>().map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            spec.zero_weights.push(ZeroWeight { segments, aqs });
        }
        "!aq_index" => {
            spec.aq_index = match rest {
                "global" => AqIndexMode::Global,
                "per_segment" => AqIndexMode::PerSegment,
                other => return Err(format!("unknown aq_index mode `{other}`")),
            };
        }
        other => return Err(format!("unknown directive `{other}`")),
    }
    Ok(())
}

impl FromStr for ModelSpec {
    type Err = SpecError;

    fn from_str(text: &str) -> Result<Self, SpecError> {
        let mut spec = ModelSpec::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SpecError::Syntax {
                line: k + 1,
                message,
            };
            if line.starts_with('!') {
                parse_directive(line, &mut spec).map_err(err)?;
                continue;
            }
            let (name, rhs) = line
                .split_once(":=")
                .ok_or_else(|| err("expected `name := clauses`".into()))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty term name".into()));
            }
            let clauses = rhs
                .split('+')
                .map(parse_clause)
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            spec.terms.push(Term::new(name, clauses));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.aq_index {
            AqIndexMode::Global => "global",
            AqIndexMode::PerSegment => "per_segment",
        };
        writeln!(f, "!aq_index {mode}")?;
        for z in &self.zero_weights {
            writeln!(f, "!zero [{}] aq {}", join(&z.segments), join(&z.aqs))?;
        }
        for t in &self.terms {
            let clauses: Vec<String> = t.clauses.iter().map(ToString::to_string).collect();
            writeln!(f, "{} := {}", t.name, clauses.join(" + "))?;
        }
        Ok(())
    }
}

/// Design matrix with response and prior weights, one row per observation.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub names: Vec<String>,
    /// Observations in row order, weights as used for fitting.
    pub rows: Vec<Observation>,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }
}

/// Evaluates `spec` over every row of `table`, applying the spec's
/// zero-weight selectors on top of the table's own weights.
pub fn build_design(table: &ObservationTable, spec: &ModelSpec) -> Result<Design, DesignError> {
    let mut segments: Vec<SegmentKey> = table.rows.iter().map(|r| r.segment).collect();
    segments.sort_unstable();
    segments.dedup();
    for &seg in &segments {
        let has_intercept = spec
            .terms
            .iter()
            .any(|t| t.clauses.iter().any(|c| c.applies_to(seg) && c.is_intercept()));
        if !has_intercept {
            return Err(DesignError::NoIntercept(seg));
        }
    }

    let masked: Vec<(SegmentKey, Vec<Quarter>)> = segments
        .iter()
        .map(|&s| (s, spec.zero_weight_aqs(s)))
        .collect();
    let p = spec.n_terms();
    let mut x = Matrix::zeros(table.len(), p);
    let mut y = Vec::with_capacity(table.len());
    let mut w = Vec::with_capacity(table.len());
    let mut rows = Vec::with_capacity(table.len());
    for (r, obs) in table.rows.iter().enumerate() {
        let at = Coords::from(obs);
        for (k, t) in spec.terms.iter().enumerate() {
            x[(r, k)] = t.value(obs.segment, &at, spec.aq_index);
        }
        let zero = masked
            .iter()
            .any(|(s, aqs)| *s == obs.segment && aqs.contains(&obs.aq));
        let weight = if zero { 0.0 } else { obs.weight };
        y.push(obs.count as f64);
        w.push(weight);
        rows.push(Observation { weight, ..*obs });
    }
    Ok(Design {
        x,
        y,
        w,
        names: spec.term_names(),
        rows,
    })
}

const PUBLISHED_SPEC: &str = include_str!("../data/published_model.spec");
const PUBLISHED_COEFFICIENTS: &str = include_str!("../data/published_coefficients.csv");

/// The published 15-segment model with its zero-weight selectors.
pub fn published_model_spec() -> ModelSpec {
    PUBLISHED_SPEC.parse().expect("embedded model spec parses")
}

/// Published coefficients, four decimals, in table order.
pub fn published_coefficients() -> Vec<(String, f64)> {
    read_coefficients(PUBLISHED_COEFFICIENTS.as_bytes()).expect("embedded coefficients parse")
}

/// Reads `term,estimate[,...]` rows; lines starting with `#` are skipped.
pub fn read_coefficients<R: std::io::Read>(reader: R) -> Result<Vec<(String, f64)>, csv::Error> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or("").to_string();
        let raw = rec.get(1).unwrap_or("").trim();
        let est: f64 = raw.parse().map_err(|_| {
            csv::Error::from(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("bad estimate `{raw}` for term `{name}`"),
            ))
        })?;
        out.push((name, est));
    }
    Ok(out)
}
