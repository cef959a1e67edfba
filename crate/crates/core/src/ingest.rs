//! Breach-record files: parsing, cleaning, period selection and aggregation
//! into quarterly triangles.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use thiserror::Error;

use crate::quarter::Quarter;
use crate::segment::{SegmentSpec, State};
use crate::triangle::Triangle;

pub const RECORD_COLUMNS: [&str; 8] = [
    "record_id",
    "state",
    "org_name",
    "occurrence_date",
    "report_date",
    "affected_state_residents",
    "is_supplementary",
    "parent_record_id",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("record file is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("record file is not valid UTF-8 at byte {offset}")]
    Encoding { offset: usize },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("record file: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {id}: report quarter {report} precedes occurrence quarter {occurrence}")]
    NegativeDelay {
        id: String,
        occurrence: Quarter,
        report: Quarter,
    },
    #[error("record {id}: {problem}")]
    NotSelected { id: String, problem: String },
    #[error(transparent)]
    Triangle(#[from] crate::triangle::TriangleError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BreachRecord {
    pub record_id: String,
    pub state: State,
    pub org_name: String,
    /// Earliest possible start of the breach.
    pub occurrence_date: Option<NaiveDate>,
    /// Earliest notification to the attorney general.
    pub report_date: Option<NaiveDate>,
    /// `None` when the notice gives no count.
    pub affected: Option<u64>,
    pub is_supplementary: bool,
    pub parent_record_id: Option<String>,
}

/// How loosely date fields are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatePolicy {
    /// ISO-8601 and `M/D/YYYY` only.
    Strict,
    /// Also "early/mid/late <Month> YYYY" (5th/15th/25th) and
    /// "<Month> YYYY" (1st).
    Fuzzy,
}

/// Dates before this year are placeholder sentinels, not real dates.
const SENTINEL_BEFORE_YEAR: i32 = 1970;

fn month_number(s: &str) -> Option<u32> {
    let t = s.trim_end_matches('.').to_ascii_lowercase();
    const NAMES: [&str; 12] = [
        "january", "february", "march", "april", "may", "june", "july", "august", "september",
        "october", "november", "december",
    ];
    NAMES
        .iter()
        .position(|n| t.len() >= 3 && (n.starts_with(&t) || (t == "sept" && *n == "september")))
        .map(|k| k as u32 + 1)
}

/// Parses a date field; absent when empty, unparseable or a sentinel.
pub fn parse_date(raw: &str, policy: DatePolicy) -> Option<NaiveDate> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    let strict = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y"))
        .ok();
    let date = strict.or_else(|| match policy {
        DatePolicy::Strict => None,
        DatePolicy::Fuzzy => parse_fuzzy(s),
    })?;
    (chrono::Datelike::year(&date) >= SENTINEL_BEFORE_YEAR).then_some(date)
}

fn parse_fuzzy(s: &str) -> Option<NaiveDate> {
    let cleaned = s.replace(',', " ");
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let (day, rest) = match words.first().map(|w| w.to_ascii_lowercase()).as_deref() {
        Some("early") => (Some(5), &words[1..]),
        Some("mid") | Some("middle") => (Some(15), &words[1..]),
        Some("late") => (Some(25), &words[1..]),
        _ => (None, &words[..]),
    };
    match rest {
        [m, y] => {
            let month = month_number(m)?;
            let year: i32 = y.parse().ok()?;
            NaiveDate::from_ymd_opt(year, month, day.unwrap_or(1))
        }
        // "December 15 2019"
        [m, d, y] if day.is_none() => {
            let month = month_number(m)?;
            NaiveDate::from_ymd_opt(y.parse().ok()?, month, d.parse().ok()?)
        }
        _ => None,
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "false" | "no" | "n" | "0" => Some(false),
        "true" | "yes" | "y" | "1" => Some(true),
        _ => None,
    }
}

fn parse_affected(s: &str) -> Result<Option<u64>, String> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("unknown") {
        return Ok(None);
    }
    t.replace(',', "")
        .parse()
        .map(Some)
        .map_err(|_| format!("invalid affected count `{t}`"))
}

/// Reads the record file. Row order is preserved.
pub fn parse_breach_records<R: Read>(
    mut source: R,
    policy: DatePolicy,
) -> Result<Vec<BreachRecord>, IngestError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| IngestError::Encoding {
        offset: e.valid_up_to(),
    })?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (k, name) in RECORD_COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or(IngestError::MissingColumn(name))?;
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        let row_err = |message: String| IngestError::Row { line, message };
        let state: State = f(1).parse().map_err(|e: crate::ParseError| row_err(e.to_string()))?;
        let is_supplementary = parse_bool(f(6))
            .ok_or_else(|| row_err(format!("invalid is_supplementary `{}`", f(6))))?;
        let parent = Some(f(7).to_string()).filter(|s| !s.is_empty());
        out.push(BreachRecord {
            record_id: f(0).to_string(),
            state,
            org_name: f(2).to_string(),
            occurrence_date: parse_date(f(3), policy),
            report_date: parse_date(f(4), policy),
            affected: parse_affected(f(5)).map_err(row_err)?,
            is_supplementary,
            parent_record_id: parent,
        });
    }
    Ok(out)
}

pub fn write_breach_records<W: Write>(writer: W, records: &[BreachRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_COLUMNS)?;
    let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.record_id.clone(),
            r.state.to_string(),
            r.org_name.clone(),
            date(r.occurrence_date),
            date(r.report_date),
            r.affected.map_or_else(|| "unknown".to_string(), |a| a.to_string()),
            r.is_supplementary.to_string(),
            r.parent_record_id.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleaningPolicy {
    /// Verified occurrence dates keyed by record id, used to repair records
    /// reported before they occurred.
    pub occurrence_corrections: HashMap<String, NaiveDate>,
    /// Drop records whose occurrence quarter lies outside their state's
    /// analysis window.
    pub enforce_windows: bool,
    /// Drop records below their state's notification threshold.
    pub enforce_thresholds: bool,
}

impl Default for CleaningPolicy {
    fn default() -> Self {
        Self {
            occurrence_corrections: HashMap::new(),
            enforce_windows: true,
            enforce_thresholds: true,
        }
    }
}

/// Counts per cleaning rule. Merged supplementary notices leave the output
/// too, so `records_out = records_in − dropped − supplementary_merged`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleaningReport {
    pub records_in: usize,
    pub negative_delay_fixed: usize,
    pub negative_delay_dropped: usize,
    pub supplementary_merged: usize,
    pub supplementary_dropped: usize,
    pub missing_field_dropped: usize,
    pub out_of_period_dropped: usize,
    pub below_threshold_dropped: usize,
    pub records_out: usize,
}

impl CleaningReport {
    pub fn removed(&self) -> usize {
        self.negative_delay_dropped
            + self.supplementary_merged
            + self.supplementary_dropped
            + self.missing_field_dropped
            + self.out_of_period_dropped
            + self.below_threshold_dropped
    }

    pub fn reconciles(&self) -> bool {
        self.records_out + self.removed() == self.records_in
    }
}

impl fmt::Display for CleaningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("records_in", self.records_in),
            ("negative_delay_fixed", self.negative_delay_fixed),
            ("negative_delay_dropped", self.negative_delay_dropped),
            ("supplementary_merged", self.supplementary_merged),
            ("supplementary_dropped", self.supplementary_dropped),
            ("missing_field_dropped", self.missing_field_dropped),
            ("out_of_period_dropped", self.out_of_period_dropped),
            ("below_threshold_dropped", self.below_threshold_dropped),
            ("records_out", self.records_out),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<24} {v}")?;
        }
        Ok(())
    }
}

fn earliest(a: Option<NaiveDate>, b: Option<NaiveDate>) -> Option<NaiveDate> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    }
}

/// Applies the cleaning rules in order: supplementary linkage, missing
/// fields, negative delays, analysis windows, notification thresholds.
pub fn clean_records(
    records: &[BreachRecord],
    policy: &CleaningPolicy,
) -> (Vec<BreachRecord>, CleaningReport) {
    let mut report = CleaningReport {
        records_in: records.len(),
        ..Default::default()
    };

    let mut originals: Vec<BreachRecord> = Vec::new();
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for r in records.iter().filter(|r| !r.is_supplementary) {
        by_id.entry(r.record_id.as_str()).or_insert(originals.len());
        originals.push(r.clone());
    }
    for s in records.iter().filter(|r| r.is_supplementary) {
        match s.parent_record_id.as_deref().and_then(|p| by_id.get(p)) {
            Some(&k) => {
                let parent = &mut originals[k];
                parent.report_date = earliest(parent.report_date, s.report_date);
                parent.occurrence_date = earliest(parent.occurrence_date, s.occurrence_date);
                report.supplementary_merged += 1;
            }
            None => report.supplementary_dropped += 1,
        }
    }

    let mut out = Vec::with_capacity(originals.len());
    for mut r in originals {
        let (Some(occ), Some(rep)) = (r.occurrence_date, r.report_date) else {
            report.missing_field_dropped += 1;
            continue;
        };
        if r.org_name.trim().is_empty() || r.affected.is_none() {
            report.missing_field_dropped += 1;
            continue;
        }
        if rep < occ {
            match policy.occurrence_corrections.get(&r.record_id) {
                Some(&fixed) if fixed <= rep => {
                    r.occurrence_date = Some(fixed);
                    report.negative_delay_fixed += 1;
                }
                _ => {
                    report.negative_delay_dropped += 1;
                    continue;
                }
            }
        }
        let occ_q = Quarter::of_date(r.occurrence_date.expect("present"));
        if policy.enforce_windows && !r.state.analysis_window().contains(occ_q) {
            report.out_of_period_dropped += 1;
            continue;
        }
        if policy.enforce_thresholds && r.affected.unwrap_or(0) < r.state.notification_threshold() {
            report.below_threshold_dropped += 1;
            continue;
        }
        out.push(r);
    }
    report.records_out = out.len();
    (out, report)
}

/// Records of `seg`'s state and severity band occurring inside its window.
pub fn select_period(records: &[BreachRecord], seg: &SegmentSpec) -> Vec<BreachRecord> {
    let window = seg.window();
    records
        .iter()
        .filter(|r| {
            r.state == seg.key.state()
                && r.affected.is_some_and(|a| seg.key.band().contains(a))
                && r.occurrence_date
                    .is_some_and(|d| window.contains(Quarter::of_date(d)))
        })
        .cloned()
        .collect()
}

/// Counts records by (AQ, DQ). Reports after the cutoff fall in the
/// unobserved region and are not counted.
pub fn aggregate_to_triangle(
    records: &[BreachRecord],
    seg: &SegmentSpec,
) -> Result<Triangle, IngestError> {
    let mut counts: BTreeMap<(Quarter, usize), u64> = BTreeMap::new();
    let window = seg.window();
    for r in records {
        let not_selected = |problem: &str| IngestError::NotSelected {
            id: r.record_id.clone(),
            problem: problem.to_string(),
        };
        let occ = r.occurrence_date.ok_or_else(|| not_selected("no occurrence date"))?;
        let rep = r.report_date.ok_or_else(|| not_selected("no report date"))?;
        let (oq, rq) = (Quarter::of_date(occ), Quarter::of_date(rep));
        if !window.contains(oq) {
            return Err(not_selected("occurrence outside the segment window"));
        }
        if rq < oq {
            return Err(IngestError::NegativeDelay {
                id: r.record_id.clone(),
                occurrence: oq,
                report: rq,
            });
        }
        if rq > seg.last_aq {
            continue;
        }
        *counts.entry((oq, oq.dev_quarter(rq) as usize)).or_insert(0) += 1;
    }
    Ok(Triangle::from_cells(
        *seg,
        counts.into_iter().map(|((aq, dq), c)| (aq, dq, c, 1.0)),
    )?)
}

/// Synthetic records reproducing `tri` exactly under aggregation: one
/// record per count, occurring mid-quarter and reported in the cell's
/// calendar quarter, with an affected count inside the segment's band.
pub fn replicate_records(tri: &Triangle) -> Vec<BreachRecord> {
    let key = tri.key();
    let mut out = Vec::new();
    for (i, j, cell) in tri.cells() {
        let aq = tri.aq(i);
        let cq = aq.offset(j as i64 - 1);
        for n in 0..cell.count {
            out.push(BreachRecord {
                record_id: format!("{key}-{aq}-{j}-{n}"),
                state: key.state(),
                org_name: format!("org {key} {aq} {j} {n}"),
                occurrence_date: Some(aq.first_day() + Duration::days(14)),
                report_date: Some(cq.first_day() + Duration::days(45)),
                affected: Some(key.band().representative()),
                is_supplementary: false,
                parent_record_id: None,
            });
        }
    }
    out
}
