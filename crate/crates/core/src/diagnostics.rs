//! Actual-versus-fitted marginal tables, Z-scores and residual heatmaps.
//!
//! On the DQ and CQ axes only weighted cells are summed, and labels whose
//! cells are all unweighted disappear. The AQ axis keeps zero-weight AQs,
//! flagged `masked`, with sums over their observed cells, so the table
//! shows how far their experience sits from the model.

use std::io::Write;

use thiserror::Error;

use crate::glm::deviance_residuals;
use crate::quarter::Quarter;
use crate::svg;
use crate::triangle::{Axis, AxisLabel, Grid, Triangle, TriangleError, Values};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{axis} label {label}: fitted sum is zero but actual sum is {actual}")]
    DegenerateLabel {
        axis: Axis,
        label: AxisLabel,
        actual: f64,
    },
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfRow {
    pub label: AxisLabel,
    pub actual: f64,
    pub fitted: f64,
    pub ratio: f64,
    pub z: f64,
    /// Zero-weight AQ shown for reference.
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfTable {
    pub axis: Axis,
    pub rows: Vec<AfRow>,
}

impl AfTable {
    /// Rows that took part in the fit.
    pub fn weighted_rows(&self) -> impl Iterator<Item = &AfRow> {
        self.rows.iter().filter(|r| !r.masked)
    }

    pub fn row(&self, label: AxisLabel) -> Option<&AfRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Row with the largest |z| among weighted and masked labels alike.
    pub fn max_abs_z(&self) -> Option<&AfRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
    }
}

fn af_row(axis: Axis, label: AxisLabel, actual: f64, fitted: f64, masked: bool) -> Result<AfRow, DiagnosticsError> {
    let (ratio, z) = if fitted > 0.0 {
        (actual / fitted, (actual - fitted) / fitted.sqrt())
    } else if actual == 0.0 {
        (1.0, 0.0)
    } else {
        return Err(DiagnosticsError::DegenerateLabel {
            axis,
            label,
            actual,
        });
    };
    Ok(AfRow {
        label,
        actual,
        fitted,
        ratio,
        z,
        masked,
    })
}

/// Compares per-label sums of `tri`'s counts against `fitted` means
/// (`fitted[i-1][j-1]`). `tri` must carry the weights used in the fit.
pub fn af_table(fitted: &Grid, tri: &Triangle, axis: Axis) -> Result<AfTable, DiagnosticsError> {
    let actual = tri.marginal_sums(axis, Values::Actual)?;
    let fit = tri.marginal_sums(axis, Values::Fitted(fitted))?;
    let mut rows = actual
        .into_iter()
        .zip(fit)
        .map(|((label, a), (_, f))| af_row(axis, label, a, f, false))
        .collect::<Result<Vec<_>, _>>()?;

    if axis == Axis::Aq {
        let unit = tri.with_unit_weights();
        for i in (1..=tri.n_aq()).filter(|&i| tri.is_masked_row(i)) {
            let row = unit.row(i)?;
            let a: f64 = row.iter().map(|c| c.count as f64).sum();
            let f: f64 = (0..row.len())
                .map(|k| {
                    fitted
                        .get(i - 1)
                        .and_then(|r| r.get(k))
                        .copied()
                        .ok_or(TriangleError::FittedShape {
                            aq: tri.aq(i),
                            dq: k + 1,
                        })
                })
                .sum::<Result<f64, _>>()?;
            rows.push(af_row(axis, AxisLabel::Quarter(tri.aq(i)), a, f, true)?);
        }
        rows.sort_by_key(|r| r.label);
    }
    Ok(AfTable { axis, rows })
}

/// Deviance residual of one observed cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualCell {
    pub aq: Quarter,
    pub i: usize,
    pub j: usize,
    pub residual: f64,
    /// Zero-weight cell; residual reported as 0.
    pub masked: bool,
}

/// One entry per observed cell of `tri`.
pub fn residual_heatmap(fitted: &Grid, tri: &Triangle) -> Result<Vec<ResidualCell>, DiagnosticsError> {
    let mut out = Vec::with_capacity(tri.n_observed());
    for (i, j, cell) in tri.cells() {
        let mu = fitted
            .get(i - 1)
            .and_then(|r| r.get(j - 1))
            .copied()
            .ok_or(TriangleError::FittedShape { aq: tri.aq(i), dq: j })?;
        let r = deviance_residuals(&[mu], &[cell.count as f64], &[cell.weight])[0];
        out.push(ResidualCell {
            aq: tri.aq(i),
            i,
            j,
            residual: r,
            masked: cell.weight <= 0.0,
        });
    }
    Ok(out)
}

/// One Z-score in the stacked heatmap export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZCell {
    pub axis: Axis,
    pub label: AxisLabel,
    pub z: f64,
    pub masked: bool,
}

/// Aligns the Z-scores of several tables (normally DQ, AQ, CQ) into one
/// series, table by table.
pub fn z_heatmap(tables: &[&AfTable]) -> Vec<ZCell> {
    tables
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(move |r| ZCell {
                axis: t.axis,
                label: r.label,
                z: r.z,
                masked: r.masked,
            })
        })
        .collect()
}

fn fmt_label(r: &AfRow) -> String {
    if r.masked {
        format!("{}*", r.label)
    } else {
        r.label.to_string()
    }
}

/// Transposed layout with two-decimal values: a header of labels, then
/// `Actual Sum`, `Fitted Sum`, `Actual/Fitted` and `Z score` lines.
/// Masked AQs are starred.
pub fn af_table_text(table: &AfTable) -> String {
    let labels: Vec<String> = table.rows.iter().map(fmt_label).collect();
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let line = |name: &str, cells: Vec<String>| {
        let mut s = format!("{name:<14}");
        for c in cells {
            s.push_str(&format!(" {c:>width$}"));
        }
        s.push('\n');
        s
    };
    out.push_str(&line(table.axis.name(), labels));
    let col = |f: fn(&AfRow) -> f64| table.rows.iter().map(|r| format!("{:.2}", f(r))).collect();
    out.push_str(&line("Actual Sum", col(|r| r.actual)));
    out.push_str(&line("Fitted Sum", col(|r| r.fitted)));
    out.push_str(&line("Actual/Fitted", col(|r| r.ratio)));
    out.push_str(&line("Z score", col(|r| r.z)));
    out
}

/// `axis,label,actual,fitted,ratio,z,masked` at full precision.
pub fn write_af_csv<W: Write>(writer: W, tables: &[&AfTable]) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["axis", "label", "actual", "fitted", "ratio", "z", "masked"])
        .map_err(std::io::Error::from)?;
    for t in tables {
        for r in &t.rows {
            w.write_record([
                t.axis.name().to_string(),
                r.label.to_string(),
                r.actual.to_string(),
                r.fitted.to_string(),
                r.ratio.to_string(),
                r.z.to_string(),
                r.masked.to_string(),
            ])
            .map_err(std::io::Error::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `aq,dq,residual,masked`, one row per observed cell.
pub fn write_residual_csv<W: Write>(writer: W, cells: &[ResidualCell]) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["aq", "dq", "residual", "masked"])
        .map_err(std::io::Error::from)?;
    for c in cells {
        w.write_record([
            c.aq.to_string(),
            c.j.to_string(),
            c.residual.to_string(),
            c.masked.to_string(),
        ])
        .map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// AQ-by-DQ residual heatmap; unobserved and masked cells are grey.
pub fn residual_svg(title: &str, tri: &Triangle, cells: &[ResidualCell]) -> String {
    let n = tri.n_aq();
    let mut grid = vec![vec![None; tri.n_dq()]; n];
    for c in cells.iter().filter(|c| !c.masked) {
        grid[c.i - 1][c.j - 1] = Some(c.residual);
    }
    let cols: Vec<String> = (1..=tri.n_dq()).map(|j| format!("DQ{j}")).collect();
    let rows: Vec<String> = (1..=n).map(|i| tri.aq(i).to_string()).collect();
    svg::heatmap(title, &cols, &rows, &grid)
}

/// One heatmap strip per axis, labels along the columns.
pub fn z_svg(title: &str, cells: &[ZCell]) -> String {
    let axes: Vec<Axis> = cells.iter().fold(Vec::new(), |mut acc, c| {
        if !acc.contains(&c.axis) {
            acc.push(c.axis);
        }
        acc
    });
    let width = axes
        .iter()
        .map(|a| cells.iter().filter(|c| c.axis == *a).count())
        .max()
        .unwrap_or(0);
    let mut grid = Vec::new();
    for a in &axes {
        let mut row: Vec<Option<f64>> = cells
            .iter()
            .filter(|c| c.axis == *a)
            .map(|c| (!c.masked).then_some(c.z))
            .collect();
        row.resize(width, None);
        grid.push(row);
    }
    let cols: Vec<String> = (1..=width).map(|k| k.to_string()).collect();
    let rows: Vec<String> = axes.iter().map(|a| a.name().to_string()).collect();
    svg::heatmap(title, &cols, &rows, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{SegmentKey, SegmentSpec};
    use crate::triangle::Selector;

    fn tri(rows: &[&[u64]]) -> Triangle {
        let key: SegmentKey = "IN1".parse().unwrap();
        let first: Quarter = "2014Q1".parse().unwrap();
        let spec = SegmentSpec::new(key, first, first.offset(rows.len() as i64 - 1));
        let cells = rows.iter().enumerate().flat_map(|(k, r)| {
            r.iter()
                .enumerate()
                .map(move |(m, &c)| (first.offset(k as i64), m + 1, c, 1.0))
        });
        Triangle::from_cells(spec, cells).unwrap()
    }

    #[test]
    fn perfect_fit_gives_unit_ratios() {
        let t = tri(&[&[3, 2, 1], &[4, 2], &[5]]);
        let fitted = t.counts();
        for axis in Axis::ALL {
            let table = af_table(&fitted, &t, axis).unwrap();
            assert!(table.rows.iter().all(|r| r.ratio == 1.0 && r.z == 0.0));
        }
        let res = residual_heatmap(&fitted, &t).unwrap();
        assert_eq!(res.len(), 6);
        assert!(res.iter().all(|c| c.residual == 0.0));
    }

    #[test]
    fn zero_fitted_cases() {
        let t = tri(&[&[0, 1], &[0]]);
        let fitted: Grid = vec![vec![0.0, 1.0], vec![0.0]];
        let dq = af_table(&fitted, &t, Axis::Dq).unwrap();
        assert_eq!((dq.rows[0].ratio, dq.rows[0].z), (1.0, 0.0));
        let bad: Grid = vec![vec![0.0, 0.0], vec![0.0]];
        assert!(matches!(
            af_table(&bad, &t, Axis::Dq),
            Err(DiagnosticsError::DegenerateLabel { .. })
        ));
    }

    #[test]
    fn masked_aq_kept_on_aq_axis_only() {
        let t = tri(&[&[3, 2, 1], &[4, 2], &[5]]);
        let masked = t.set_zero_weight(&Selector::Aqs(vec!["2014Q2".parse().unwrap()]));
        let fitted: Grid = vec![vec![2.0, 2.0, 2.0], vec![2.0, 2.0], vec![2.0]];
        let aq = af_table(&fitted, &masked, Axis::Aq).unwrap();
        assert_eq!(aq.rows.len(), 3);
        assert!(aq.rows[1].masked);
        assert_eq!(aq.rows[1].actual, 6.0);
        let dq = af_table(&fitted, &masked, Axis::Dq).unwrap();
        assert_eq!(dq.rows[0].actual, 8.0);
        let cq = af_table(&fitted, &masked, Axis::Cq).unwrap();
        let total: f64 = cq.rows.iter().map(|r| r.actual).sum();
        assert_eq!(total, 11.0);
        let cells = z_heatmap(&[&dq, &aq, &cq]);
        assert_eq!(cells.len(), dq.rows.len() + aq.rows.len() + cq.rows.len());
    }

    #[test]
    fn text_layout() {
        let t = tri(&[&[3, 2], &[4]]);
        let fitted: Grid = vec![vec![2.5, 2.0], vec![4.5]];
        let text = af_table_text(&af_table(&fitted, &t, Axis::Dq).unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].contains("Q1") && lines[0].contains("Q2"));
        assert!(lines[1].starts_with("Actual Sum") && lines[1].contains("7.00"));
        assert!(lines[4].starts_with("Z score") && lines[4].contains("0.00"));
    }
}
