//! Run-off triangles of incremental counts and their stacked observation table.
//!
//! Indices are 1-based throughout: AQ `i` is the `i`-th accident quarter of the
//! segment window and DQ `j = 1` is the occurrence quarter itself. A cell is
//! observed when its calendar quarter does not exceed the segment cutoff
//! (`last_aq`), which makes the observed region the upper-left triangle.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::error::ParseError;
use crate::quarter::Quarter;
use crate::segment::{SegmentKey, SegmentSpec};

#[derive(Debug, Error)]
pub enum TriangleError {
    #[error("row {i} out of range (triangle has {n} accident quarters)")]
    RowOutOfRange { i: usize, n: usize },
    #[error("{segment}: cell ({aq}, DQ {dq}) lies outside the observed triangle")]
    Unobserved {
        segment: SegmentKey,
        aq: Quarter,
        dq: usize,
    },
    #[error("{segment}: weight {weight} at ({aq}, DQ {dq}) is outside [0, 1]")]
    BadWeight {
        segment: SegmentKey,
        aq: Quarter,
        dq: usize,
        weight: f64,
    },
    #[error("segment {0} appears more than once")]
    DuplicateSegment(SegmentKey),
    #[error("fitted grid does not cover ({aq}, DQ {dq})")]
    FittedShape { aq: Quarter, dq: usize },
    #[error("line {line}: {source}")]
    Parse { line: u64, source: ParseError },
    #[error("triangle file: {0}")]
    Csv(#[from] csv::Error),
    #[error("triangle file is missing column `{0}`")]
    MissingColumn(&'static str),
}

/// One cell of a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub count: u64,
    pub weight: f64,
}

impl Default for Cell {
    fn default() -> Self {
        Self {
            count: 0,
            weight: 1.0,
        }
    }
}

/// Marginal axis of a triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Aq,
    Dq,
    Cq,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Dq, Axis::Aq, Axis::Cq];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Aq => "AQ",
            Axis::Dq => "DQ",
            Axis::Cq => "CQ",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AQ" => Ok(Axis::Aq),
            "DQ" => Ok(Axis::Dq),
            "CQ" => Ok(Axis::Cq),
            _ => Err(ParseError::Axis(s.to_string())),
        }
    }
}

/// Label along an axis: a quarter for AQ and CQ, an index for DQ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AxisLabel {
    Quarter(Quarter),
    Dev(usize),
}

impl fmt::Display for AxisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisLabel::Quarter(q) => write!(f, "{q}"),
            AxisLabel::Dev(j) => write!(f, "Q{j}"),
        }
    }
}

/// Per-cell reals shaped like a triangle (`grid[i-1][j-1]`). Rows may be
/// longer than the observed region; extra entries are ignored by marginals.
pub type Grid = Vec<Vec<f64>>;

/// Values summed by [`Triangle::marginal_sums`].
#[derive(Debug, Clone, Copy)]
pub enum Values<'a> {
    Actual,
    Fitted(&'a Grid),
}

/// Cells to exclude from fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Aqs(Vec<Quarter>),
    Cells(Vec<(Quarter, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    segment: SegmentSpec,
    /// `rows[i-1]` holds exactly the observed cells of AQ `i`.
    rows: Vec<Vec<Cell>>,
}

impl Triangle {
    /// All-zero triangle with unit weights over the segment's observed region.
    pub fn zeros(segment: SegmentSpec) -> Self {
        let n = segment.n_aq();
        let rows = (0..n).map(|k| vec![Cell::default(); n - k]).collect();
        Self { segment, rows }
    }

    /// Builds a triangle from `(aq, dq, count, weight)` cells; missing observed
    /// cells are zero with weight 1.
    pub fn from_cells<I>(segment: SegmentSpec, cells: I) -> Result<Self, TriangleError>
    where
        I: IntoIterator<Item = (Quarter, usize, u64, f64)>,
    {
        let mut tri = Self::zeros(segment);
        for (aq, dq, count, weight) in cells {
            let i = tri.row_of(aq);
            let slot = i
                .filter(|_| dq >= 1)
                .and_then(|i| tri.rows[i - 1].get_mut(dq - 1))
                .ok_or(TriangleError::Unobserved {
                    segment: segment.key,
                    aq,
                    dq,
                })?;
            if !(0.0..=1.0).contains(&weight) {
                return Err(TriangleError::BadWeight {
                    segment: segment.key,
                    aq,
                    dq,
                    weight,
                });
            }
            *slot = Cell { count, weight };
        }
        Ok(tri)
    }

    pub fn segment(&self) -> &SegmentSpec {
        &self.segment
    }

    pub fn key(&self) -> SegmentKey {
        self.segment.key
    }

    pub fn cutoff(&self) -> Quarter {
        self.segment.last_aq
    }

    pub fn n_aq(&self) -> usize {
        self.rows.len()
    }

    /// Development quarters spanned by the observed region.
    pub fn n_dq(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn aq(&self, i: usize) -> Quarter {
        self.segment.first_aq.offset(i as i64 - 1)
    }

    pub fn row_of(&self, aq: Quarter) -> Option<usize> {
        let k = aq.since(self.segment.first_aq);
        (0..self.n_aq() as i64).contains(&k).then_some(k as usize + 1)
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        i >= 1 && j >= 1 && i <= self.n_aq() && j <= self.rows[i - 1].len()
    }

    pub fn cell(&self, i: usize, j: usize) -> Option<&Cell> {
        self.rows.get(i.checked_sub(1)?)?.get(j.checked_sub(1)?)
    }

    /// Observed cells of AQ `i`, DQ 1 first.
    pub fn row(&self, i: usize) -> Result<&[Cell], TriangleError> {
        i.checked_sub(1)
            .and_then(|k| self.rows.get(k))
            .map(Vec::as_slice)
            .ok_or(TriangleError::RowOutOfRange { i, n: self.n_aq() })
    }

    /// Iterates `(i, j, cell)` over the observed region, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, &Cell)> {
        self.rows.iter().enumerate().flat_map(|(k, row)| {
            row.iter()
                .enumerate()
                .map(move |(m, cell)| (k + 1, m + 1, cell))
        })
    }

    pub fn n_observed(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn total(&self) -> u64 {
        self.cells().map(|(_, _, c)| c.count).sum()
    }

    /// Reported count of AQ `i` over its observed cells.
    pub fn reported(&self, i: usize) -> u64 {
        self.rows[i - 1].iter().map(|c| c.count).sum()
    }

    /// True when every observed cell of AQ `i` has zero weight.
    pub fn is_masked_row(&self, i: usize) -> bool {
        self.rows[i - 1].iter().all(|c| c.weight == 0.0)
    }

    pub fn label(&self, axis: Axis, i: usize, j: usize) -> AxisLabel {
        match axis {
            Axis::Aq => AxisLabel::Quarter(self.aq(i)),
            Axis::Dq => AxisLabel::Dev(j),
            Axis::Cq => AxisLabel::Quarter(self.aq(i).offset(j as i64 - 1)),
        }
    }

    /// Sums over observed cells with positive weight, grouped by `axis` label
    /// and ordered by label. Labels whose cells all carry zero weight are
    /// absent.
    pub fn marginal_sums(
        &self,
        axis: Axis,
        values: Values<'_>,
    ) -> Result<Vec<(AxisLabel, f64)>, TriangleError> {
        let mut sums: BTreeMap<AxisLabel, f64> = BTreeMap::new();
        for (i, j, cell) in self.cells() {
            if cell.weight <= 0.0 {
                continue;
            }
            let v = match values {
                Values::Actual => cell.count as f64,
                Values::Fitted(grid) => grid
                    .get(i - 1)
                    .and_then(|r| r.get(j - 1))
                    .copied()
                    .ok_or(TriangleError::FittedShape {
                        aq: self.aq(i),
                        dq: j,
                    })?,
            };
            *sums.entry(self.label(axis, i, j)).or_insert(0.0) += v;
        }
        Ok(sums.into_iter().collect())
    }

    /// Running totals along AQ `i`; nondecreasing.
    pub fn cumulative_row(&self, i: usize) -> Result<Vec<u64>, TriangleError> {
        let mut acc = 0;
        Ok(self
            .row(i)?
            .iter()
            .map(|c| {
                acc += c.count;
                acc
            })
            .collect())
    }

    /// Copy with the selected cells' weights set to zero. Selections outside
    /// the observed region are ignored.
    pub fn set_zero_weight(&self, selector: &Selector) -> Triangle {
        let mut out = self.clone();
        match selector {
            Selector::Aqs(aqs) => {
                for &aq in aqs {
                    if let Some(i) = out.row_of(aq) {
                        out.rows[i - 1].iter_mut().for_each(|c| c.weight = 0.0);
                    }
                }
            }
            Selector::Cells(cells) => {
                for &(aq, dq) in cells {
                    if let Some(c) = out
                        .row_of(aq)
                        .and_then(|i| out.rows[i - 1].get_mut(dq.wrapping_sub(1)))
                    {
                        c.weight = 0.0;
                    }
                }
            }
        }
        out
    }

    /// Copy with every weight reset to 1.
    pub fn with_unit_weights(&self) -> Triangle {
        let mut out = self.clone();
        out.rows
            .iter_mut()
            .flatten()
            .for_each(|c| c.weight = 1.0);
        out
    }

    /// Counts as a grid (`grid[i-1][j-1]`) over the observed region.
    pub fn counts(&self) -> Grid {
        self.rows
            .iter()
            .map(|r| r.iter().map(|c| c.count as f64).collect())
            .collect()
    }
}

/// One observed cell in the stacked, multi-segment layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub segment: SegmentKey,
    pub aq: Quarter,
    /// AQ index within the segment window.
    pub i: usize,
    pub j: usize,
    /// Calendar index within the segment window, `i + j - 1`.
    pub c: usize,
    /// AQ offset from the epoch, epoch itself being 1.
    pub global_i: i64,
    pub count: u64,
    pub weight: f64,
}

impl Observation {
    pub fn cq(&self) -> Quarter {
        self.aq.offset(self.j as i64 - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationTable {
    pub epoch: Option<Quarter>,
    pub rows: Vec<Observation>,
}

impl ObservationTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.count).sum()
    }
}

/// Stacks triangles into one observation table, one row per observed cell.
pub fn stack(triangles: &[Triangle], epoch: Quarter) -> Result<ObservationTable, TriangleError> {
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(triangles.iter().map(Triangle::n_observed).sum());
    for tri in triangles {
        if !seen.insert(tri.key()) {
            return Err(TriangleError::DuplicateSegment(tri.key()));
        }
        for (i, j, cell) in tri.cells() {
            let aq = tri.aq(i);
            rows.push(Observation {
                segment: tri.key(),
                aq,
                i,
                j,
                c: i + j - 1,
                global_i: aq.since(epoch) + 1,
                count: cell.count,
                weight: cell.weight,
            });
        }
    }
    Ok(ObservationTable {
        epoch: Some(epoch),
        rows,
    })
}

const REFERENCE_CSV: &str = include_str!("../data/reference_triangles.csv");

/// The 15 published triangles, in segment order, with unit weights.
pub fn reference_triangles() -> Vec<Triangle> {
    read_triangles(REFERENCE_CSV.as_bytes()).expect("embedded triangles are well formed")
}

pub fn reference_triangle(key: SegmentKey) -> Triangle {
    reference_triangles()
        .into_iter()
        .find(|t| t.key() == key)
        .expect("every segment is embedded")
}

/// Reads `segment,aq,dq,count,weight` rows. Each segment's window runs from
/// its smallest to its largest AQ present; segments keep first-seen order.
pub fn read_triangles<R: Read>(reader: R) -> Result<Vec<Triangle>, TriangleError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(TriangleError::MissingColumn(name))
    };
    let (cs, ca, cd, cc) = (col("segment")?, col("aq")?, col("dq")?, col("count")?);
    let cw = headers.iter().position(|h| h == "weight");

    let mut order: Vec<SegmentKey> = Vec::new();
    let mut cells: BTreeMap<SegmentKey, Vec<(Quarter, usize, u64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let wrap = |source| TriangleError::Parse { line, source };
        let field = |k: usize| rec.get(k).unwrap_or("");
        let key: SegmentKey = field(cs).parse().map_err(wrap)?;
        let aq: Quarter = field(ca).parse().map_err(wrap)?;
        let bad = |what, value: &str| {
            wrap(ParseError::Value {
                what,
                value: value.to_string(),
            })
        };
        let dq: usize = field(cd).parse().map_err(|_| bad("dq", field(cd)))?;
        let count: u64 = field(cc).parse().map_err(|_| bad("count", field(cc)))?;
        let weight: f64 = match cw.map(field) {
            None | Some("") => 1.0,
            Some(w) => w.parse().map_err(|_| bad("weight", w))?,
        };
        if !cells.contains_key(&key) {
            order.push(key);
        }
        cells.entry(key).or_default().push((aq, dq, count, weight));
    }

    order
        .into_iter()
        .map(|key| {
            let cs = cells.remove(&key).unwrap_or_default();
            let first = cs.iter().map(|c| c.0).min().expect("segment has rows");
            let last = cs.iter().map(|c| c.0).max().expect("segment has rows");
            Triangle::from_cells(SegmentSpec::new(key, first, last), cs)
        })
        .collect()
}

/// Writes every observed cell, zeros included, so that reading back recovers
/// the window.
pub fn write_triangles<W: Write>(writer: W, triangles: &[Triangle]) -> Result<(), TriangleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["segment", "aq", "dq", "count", "weight"])?;
    for tri in triangles {
        for (i, j, cell) in tri.cells() {
            w.write_record([
                tri.key().to_string(),
                tri.aq(i).to_string(),
                j.to_string(),
                cell.count.to_string(),
                cell.weight.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
