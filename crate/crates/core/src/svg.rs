//! Minimal static SVG charts: line charts and diverging heatmaps.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Line chart. `x_ticks` places labelled ticks at data x positions.
pub fn line_chart(
    title: &str,
    y_label: &str,
    series: &[Series],
    x_ticks: &[(f64, String)],
) -> String {
    let (w, h) = (900.0, 480.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 70.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let (x0, x1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0,
            format_tick(v)
        );
    }
    for (x, label) in x_ticks {
        let px = sx(*x);
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="end" transform="rotate(-60 {px:.1} {:.1})">{}</text>"#,
            top + ph + 14.0,
            top + ph + 14.0,
            escape(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 * k as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 35.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Maps `v / scale` in [−1, 1] to blue-white-red.
fn diverging(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
    let (r, g, b) = if t >= 0.0 {
        (fade(178.0), fade(24.0), fade(43.0))
    } else {
        (fade(33.0), fade(102.0), fade(172.0))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap of `values[row][col]`; `None` cells are drawn grey. The colour
/// scale is symmetric about zero.
pub fn heatmap(
    title: &str,
    col_labels: &[String],
    row_labels: &[String],
    values: &[Vec<Option<f64>>],
) -> String {
    let cell = 14.0;
    let (left, top) = (70.0, 40.0);
    let ncol = col_labels.len().max(1) as f64;
    let nrow = row_labels.len().max(1) as f64;
    let w = left + ncol * cell + 20.0;
    let h = top + nrow * cell + 60.0;
    let scale = values
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="9">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="13">{} (max |value| {:.2})</text>"#,
        escape(title),
        scale
    );
    for (r, row) in values.iter().enumerate() {
        let y = top + r as f64 * cell;
        for (c, v) in row.iter().enumerate() {
            let x = left + c as f64 * cell;
            let fill = v.map_or_else(|| "#cccccc".to_string(), |v| diverging(v, scale));
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{fill}"/>"#
            );
        }
    }
    for (r, label) in row_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 4.0,
            top + r as f64 * cell + cell * 0.75,
            escape(label)
        );
    }
    for (c, label) in col_labels.iter().enumerate() {
        let x = left + c as f64 * cell + cell * 0.7;
        let y = top + nrow * cell + 6.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="end" transform="rotate(-90 {x:.1} {y:.1})">{}</text>"#,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_is_wellformed() {
        let s = line_chart(
            "A & B",
            "count",
            &[Series {
                name: "x".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            }],
            &[(0.0, "2012Q1".into())],
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("A &amp; B"));
        assert!(s.contains("<polyline"));
    }

    #[test]
    fn zero_heatmap_is_blank() {
        let s = heatmap("z", &["a".into()], &["r".into()], &[vec![Some(0.0)]]);
        assert!(s.contains("#ffffff"));
    }

    #[test]
    fn colour_extremes() {
        assert_eq!(diverging(1.0, 1.0), "#b2182b");
        assert_eq!(diverging(-1.0, 1.0), "#2166ac");
    }
}
