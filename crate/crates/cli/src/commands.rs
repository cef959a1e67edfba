//! The six subcommands. Each reads its inputs, computes, and writes every
//! artifact through [`OutDir`].

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;

use ibnr_core::analytics::{
    dev_pattern, exception_delays, fit_trend, freq_index, growth_stats,
    project_lower, AnalyticsError, PatternSource, Projection, TrendFit, TrendLayout,
};
use ibnr_core::design::{build_design, published_coefficients, published_model_spec, ModelSpec};
use ibnr_core::diagnostics::{
    af_table, af_table_text, residual_heatmap, residual_svg, write_af_csv, write_residual_csv,
    z_heatmap, z_svg,
};
use ibnr_core::glm::{fit_design, read_fit, simulate_from_model, write_fit, FitError, IrlsOptions};
use ibnr_core::ingest::{
    aggregate_to_triangle, clean_records, parse_breach_records, replicate_records, select_period,
    write_breach_records, CleaningPolicy, DatePolicy,
};
use ibnr_core::svg::{line_chart, Series};
use ibnr_core::triangle::{reference_triangles, read_triangles, stack, write_triangles, Axis, Triangle};
use ibnr_core::{Quarter, QuarterRange, SegmentKey, SegmentSpec};

use crate::config::{ModelChoice, RunConfig};
use crate::error::CliError;
use crate::output::{read_artifact, OutDir};

const FIT_FILE: &str = "fit.csv";
const SPEC_FILE: &str = "model.spec";
const TRIANGLES_FILE: &str = "triangles.csv";
const RUN_FILE: &str = "fit_run.cfg";

/// Growth windows of the published comparison table.
const GROWTH_WINDOWS: [(Quarter, Quarter); 5] = [
    (Quarter::of(2013, 2), Quarter::of(2014, 1)),
    (Quarter::of(2014, 2), Quarter::of(2015, 4)),
    (Quarter::of(2016, 1), Quarter::of(2020, 2)),
    (Quarter::of(2020, 3), Quarter::of(2021, 2)),
    (Quarter::of(2021, 3), Quarter::of(2021, 4)),
];

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Input("ingest needs --input RECORDS.csv".into()))?;
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let policy = if cfg.strict_dates {
        DatePolicy::Strict
    } else {
        DatePolicy::Fuzzy
    };
    let records = parse_breach_records(bytes.as_slice(), policy)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        warn(format_args!("{} holds no records; triangles will be empty", path.display()));
    }
    let (clean, report) = clean_records(&records, &CleaningPolicy::default());

    let mut out = OutDir::create(&cfg.out)?;
    let mut all = Vec::new();
    for &key in &cfg.segments {
        let seg = key.published_window();
        let tri = aggregate_to_triangle(&select_period(&clean, &seg), &seg).map_err(input_err)?;
        out.write_with(&format!("{key}_triangle.csv"), |buf| {
            write_triangles(buf, std::slice::from_ref(&tri))
        })?;
        all.push(tri);
    }
    out.write_with(TRIANGLES_FILE, |buf| write_triangles(buf, &all))?;
    out.write("cleaning_report.txt", report.to_string().as_bytes())?;
    println!(
        "ingested {} records, kept {}, wrote {} triangles to {}",
        report.records_in,
        report.records_out,
        all.len(),
        cfg.out.display()
    );
    Ok(())
}

fn select(triangles: Vec<Triangle>, cfg: &RunConfig) -> Result<Vec<Triangle>, CliError> {
    if !cfg.segments_given {
        return Ok(triangles);
    }
    let mut picked = Vec::new();
    for &key in &cfg.segments {
        let tri = triangles
            .iter()
            .find(|t| t.key() == key)
            .ok_or_else(|| CliError::Input(format!("segment {key} is not among the triangles")))?;
        picked.push(tri.clone());
    }
    Ok(picked)
}

fn model_spec(cfg: &RunConfig, triangles: &[Triangle]) -> Result<ModelSpec, CliError> {
    let keys: Vec<SegmentKey> = triangles.iter().map(Triangle::key).collect();
    let spec = match &cfg.model {
        ModelChoice::Published => published_model_spec(),
        ModelChoice::CrossClassified => {
            let specs: Vec<SegmentSpec> = triangles.iter().map(|t| *t.segment()).collect();
            ModelSpec::cross_classified(&specs)
        }
        ModelChoice::File(p) => fs::read_to_string(p)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            .parse()
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
    };
    Ok(spec.restrict_to(&keys))
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let triangles = match &cfg.input {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            read_triangles(file).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => reference_triangles(),
    };
    let triangles = select(triangles, cfg)?;
    if triangles.is_empty() {
        return Err(CliError::Input("no triangles to fit".into()));
    }
    let spec = model_spec(cfg, &triangles)?;
    let table = stack(&triangles, cfg.epoch).map_err(input_err)?;
    let design = build_design(&table, &spec).map_err(input_err)?;
    let result = fit_design(&design, &IrlsOptions::default()).map_err(|e| match e {
        FitError::RankDeficient { .. } => CliError::Numerical(e.to_string()),
        FitError::Dimension(_) | FitError::InvalidData(_) => CliError::Input(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    })?;
    if !result.converged {
        warn(format_args!("IRLS stopped after {} iterations without converging", result.iterations));
    }

    let mut out = OutDir::create(&cfg.out)?;
    out.write_with(FIT_FILE, |buf| write_fit(buf, &result))?;
    out.write(SPEC_FILE, spec.to_string().as_bytes())?;
    out.write_with(TRIANGLES_FILE, |buf| write_triangles(buf, &triangles))?;
    out.write(RUN_FILE, format!("epoch={}\n", cfg.epoch).as_bytes())?;
    let mut log = String::from("iteration,relative_deviance_change\n");
    for (k, d) in result.history.iter().enumerate() {
        let _ = writeln!(log, "{},{d:e}", k + 2);
    }
    let _ = writeln!(
        log,
        "# converged={} iterations={} deviance={} pearson={}",
        result.converged, result.iterations, result.deviance, result.pearson
    );
    out.write("convergence.log", log.as_bytes())?;
    println!(
        "fitted {} terms on {} weighted cells: dispersion {:.5}, {} iterations, converged {}",
        result.p, result.effective_n, result.dispersion, result.iterations, result.converged
    );
    Ok(())
}

/// What `project`, `diagnose` and `report` read back from a fit.
struct Fitted {
    spec: ModelSpec,
    coefficients: Vec<f64>,
    triangles: Vec<Triangle>,
    epoch: Quarter,
}

fn load_fit(cfg: &RunConfig) -> Result<Fitted, CliError> {
    let dir = &cfg.out;
    let fit_text = read_artifact(dir, FIT_FILE, "fit")?;
    let spec_text = read_artifact(dir, SPEC_FILE, "fit")?;
    let tri_text = read_artifact(dir, TRIANGLES_FILE, "fit")?;
    let run_text = read_artifact(dir, RUN_FILE, "fit")?;
    let bad = |name: &str, e: &dyn std::fmt::Display| {
        CliError::MissingArtifact(format!("{}: unreadable fit artifact: {e}", dir.join(name).display()))
    };

    let spec: ModelSpec = spec_text.parse().map_err(|e| bad(SPEC_FILE, &e))?;
    let summary = read_fit(fit_text.as_bytes()).map_err(|e| bad(FIT_FILE, &e))?;
    let coefficients = spec
        .align_coefficients(&summary.coefficients)
        .map_err(|e| bad(FIT_FILE, &e))?;
    let triangles = read_triangles(tri_text.as_bytes()).map_err(|e| bad(TRIANGLES_FILE, &e))?;
    let epoch = run_text
        .lines()
        .find_map(|l| l.strip_prefix("epoch="))
        .ok_or_else(|| bad(RUN_FILE, &"no epoch"))?
        .trim()
        .parse()
        .map_err(|e| bad(RUN_FILE, &e))?;
    Ok(Fitted {
        spec,
        coefficients,
        triangles: select(triangles, cfg)?,
        epoch,
    })
}

fn project_one(f: &Fitted, tri: &Triangle, horizon: Option<usize>) -> Result<Projection, CliError> {
    project_lower(&f.coefficients, &f.spec, tri, f.epoch, horizon).map_err(|e| match e {
        AnalyticsError::Horizon { .. } => CliError::Input(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    })
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn project(cfg: &RunConfig) -> Result<(), CliError> {
    let f = load_fit(cfg)?;
    let projections = f
        .triangles
        .iter()
        .map(|t| project_one(&f, t, cfg.horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = OutDir::create(&cfg.out)?;
    let mut summary = Vec::new();
    for p in &projections {
        let rows = (0..p.aqs.len()).map(|k| {
            vec![
                p.aqs[k].to_string(),
                num(p.reported[k]),
                num(p.ibnr[k]),
                num(p.ultimates[k]),
                p.masked[k].to_string(),
            ]
        });
        out.write(
            &format!("{}_projection.csv", p.segment),
            &csv_bytes(&["aq", "reported", "ibnr", "ultimate", "masked"], rows),
        )?;
        let cells = (0..p.aqs.len()).flat_map(|k| {
            (0..p.horizon).map(move |m| {
                vec![
                    p.aqs[k].to_string(),
                    (m + 1).to_string(),
                    num(p.completed[k][m]),
                    (m < p.observed[k]).to_string(),
                ]
            })
        });
        out.write(
            &format!("{}_completed.csv", p.segment),
            &csv_bytes(&["aq", "dq", "value", "observed"], cells),
        )?;
        let total = |v: &[f64]| v.iter().sum::<f64>();
        summary.push(vec![
            p.segment.to_string(),
            num(total(&p.reported)),
            num(total(&p.ibnr)),
            num(total(&p.ultimates)),
        ]);
    }
    out.write(
        "projection_summary.csv",
        &csv_bytes(&["segment", "reported", "ibnr", "ultimate"], summary),
    )?;
    println!("projected {} segments into {}", projections.len(), cfg.out.display());
    Ok(())
}

pub fn diagnose(cfg: &RunConfig) -> Result<(), CliError> {
    let f = load_fit(cfg)?;
    let mut out = OutDir::create(&cfg.out)?;
    for tri in &f.triangles {
        let key = tri.key();
        let weighted = f.spec.apply_zero_weights(tri);
        let fitted = project_one(&f, tri, None)?.fitted_upper();
        let numerical = |e: ibnr_core::diagnostics::DiagnosticsError| CliError::Numerical(e.to_string());
        let tables = Axis::ALL
            .iter()
            .map(|&axis| af_table(&fitted, &weighted, axis))
            .collect::<Result<Vec<_>, _>>()
            .map_err(numerical)?;
        let refs: Vec<_> = tables.iter().collect();
        out.write_with(&format!("{key}_af.csv"), |buf| write_af_csv(buf, &refs))?;
        let mut text = String::new();
        for t in &tables {
            let _ = writeln!(text, "{key} actual versus fitted by {}", t.axis.name());
            text.push_str(&af_table_text(t));
            text.push('\n');
        }
        out.write(&format!("{key}_af.txt"), text.as_bytes())?;
        let residuals = residual_heatmap(&fitted, &weighted).map_err(numerical)?;
        out.write_with(&format!("{key}_residuals.csv"), |buf| write_residual_csv(buf, &residuals))?;
        out.write(
            &format!("{key}_residuals.svg"),
            residual_svg(&format!("{key} deviance residuals"), &weighted, &residuals).as_bytes(),
        )?;
        out.write(
            &format!("{key}_z.svg"),
            z_svg(&format!("{key} actual-versus-fitted z"), &z_heatmap(&refs)).as_bytes(),
        )?;
    }
    println!("diagnosed {} segments into {}", f.triangles.len(), cfg.out.display());
    Ok(())
}

fn quarter_ticks(aqs: &[Quarter]) -> Vec<(f64, String)> {
    aqs.iter()
        .enumerate()
        .filter(|(_, q)| q.quarter() == 1)
        .map(|(k, q)| (k as f64, q.to_string()))
        .collect()
}

fn trend_rows(stage: &str, fit: &TrendFit) -> Vec<Vec<String>> {
    fit.layout
        .term_names()
        .iter()
        .enumerate()
        .filter(|(k, _)| fit.included[*k])
        .map(|(k, name)| {
            vec![
                stage.to_string(),
                name.clone(),
                num(fit.coefficients[k]),
                num(fit.std_errors[k]),
                num(fit.z[k]),
                fit.significant[k].to_string(),
            ]
        })
        .collect()
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let f = load_fit(cfg)?;
    let mut out = OutDir::create(&cfg.out)?;
    for tri in &f.triangles {
        let key = tri.key();
        let p = project_one(&f, tri, cfg.horizon)?;
        let x: Vec<f64> = (0..p.aqs.len()).map(|k| k as f64).collect();
        let ticks = quarter_ticks(&p.aqs);

        let index = match freq_index(&p.ultimate_series(), cfg.base) {
            Ok(v) => Some(v),
            Err(e) => {
                warn(format_args!("{key}: no frequency index ({e})"));
                None
            }
        };
        let rows = (0..p.aqs.len()).map(|k| {
            vec![
                p.aqs[k].to_string(),
                num(p.reported[k]),
                num(p.ibnr[k]),
                num(p.ultimates[k]),
                index.as_ref().map_or_else(String::new, |v| num(v[k].1)),
            ]
        });
        out.write(
            &format!("{key}_freq.csv"),
            &csv_bytes(&["aq", "reported", "ibnr", "ultimate", "freq_index"], rows),
        )?;
        let series = |name: &str, v: &[f64]| Series {
            name: name.into(),
            points: x.iter().copied().zip(v.iter().copied()).collect(),
        };
        out.write(
            &format!("{key}_freq.svg"),
            line_chart(
                &format!("{key} breaches by accident quarter"),
                "count",
                &[series("reported", &p.reported), series("ultimate", &p.ultimates)],
                &ticks,
            )
            .as_bytes(),
        )?;

        let mut pattern_rows = Vec::new();
        let mut curves = Vec::new();
        for (k, &aq) in p.aqs.iter().enumerate() {
            let Ok(curve) = dev_pattern(&p, aq, PatternSource::Fitted) else {
                continue;
            };
            for (m, (pj, cj)) in curve.p.iter().zip(&curve.cumulative).enumerate() {
                pattern_rows.push(vec![aq.to_string(), (m + 1).to_string(), num(*pj), num(*cj)]);
            }
            if k % 8 == 0 || k + 1 == p.aqs.len() {
                curves.push(Series {
                    name: aq.to_string(),
                    points: curve.cumulative.iter().enumerate().map(|(m, c)| ((m + 1) as f64, *c)).collect(),
                });
            }
        }
        out.write(
            &format!("{key}_pattern.csv"),
            &csv_bytes(&["aq", "dq", "p", "cumulative"], pattern_rows),
        )?;
        let dq_ticks: Vec<(f64, String)> = (1..=p.horizon).step_by(4).map(|j| (j as f64, format!("DQ{j}"))).collect();
        out.write(
            &format!("{key}_pattern.svg"),
            line_chart(&format!("{key} cumulative reporting pattern"), "share reported", &curves, &dq_ticks)
                .as_bytes(),
        )?;

        let mut delays = Vec::new();
        for &aq in &p.aqs {
            match exception_delays(&f.coefficients, &f.spec, tri, f.epoch, &[aq], cfg.delay_convention) {
                Ok(d) => delays.extend(d),
                Err(AnalyticsError::DegenerateRow(_)) => {}
                Err(e) => return Err(CliError::Numerical(e.to_string())),
            }
        }
        let rows = delays.iter().map(|d| {
            vec![
                d.aq.to_string(),
                num(d.trend),
                num(d.with_exceptions),
                num(d.delta()),
                d.masked.to_string(),
            ]
        });
        out.write(
            &format!("{key}_delay.csv"),
            &csv_bytes(&["aq", "trend", "with_exceptions", "delta", "masked"], rows),
        )?;
        let pos = |aq: Quarter| p.aqs.iter().position(|&q| q == aq).unwrap_or(0) as f64;
        let delay_series = |name: &str, g: fn(&ibnr_core::analytics::ExceptionDelay) -> f64| Series {
            name: name.into(),
            points: delays.iter().map(|d| (pos(d.aq), g(d))).collect(),
        };
        out.write(
            &format!("{key}_delay.svg"),
            line_chart(
                &format!("{key} average reporting delay ({})", cfg.delay_convention),
                "quarters",
                &[delay_series("trend", |d| d.trend), delay_series("with exceptions", |d| d.with_exceptions)],
                &ticks,
            )
            .as_bytes(),
        )?;

        let ult = p.ultimate_series();
        let mut growth = Vec::new();
        for (a, b) in GROWTH_WINDOWS {
            let window = QuarterRange::new(a, b);
            if let Ok(g) = growth_stats(&ult, &[window]) {
                let g = g[0];
                growth.push(vec![window.to_string(), g.n.to_string(), num(g.mean), num(g.sd)]);
            }
        }
        out.write(
            &format!("{key}_growth.csv"),
            &csv_bytes(&["window", "n", "mean_pct", "sd_pct"], growth),
        )?;

        let mut trend = Vec::new();
        match fit_trend(&ult, TrendLayout::default()) {
            Ok(full) => {
                trend.extend(trend_rows("full", &full));
                match full.prune_quarter_shocks() {
                    Ok(pruned) => trend.extend(trend_rows("pruned", &pruned)),
                    Err(e) => warn(format_args!("{key}: pruned trend fit failed ({e})")),
                }
            }
            Err(e) => warn(format_args!("{key}: no break-point trend fit ({e})")),
        }
        out.write(
            &format!("{key}_trend.csv"),
            &csv_bytes(&["stage", "term", "estimate", "std_error", "z", "significant"], trend),
        )?;
    }
    println!("reported {} segments into {}", f.triangles.len(), cfg.out.display());
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    if !(cfg.dispersion >= 1.0 && cfg.dispersion.is_finite()) {
        return Err(CliError::Input(format!("dispersion {} is below 1", cfg.dispersion)));
    }
    let named = match (&cfg.coefficients, &cfg.model) {
        (Some(p), _) => {
            let file = fs::File::open(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            read_fit(std::io::BufReader::new(file))
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                .coefficients
        }
        (None, ModelChoice::Published) => published_coefficients(),
        (None, _) => return Err(CliError::Input("simulate needs --coefficients for this model".into())),
    };

    let shapes: Vec<Triangle> = cfg
        .segments
        .iter()
        .filter_map(|&key| {
            let window = key.published_window();
            let n = cfg.quarters.unwrap_or(window.n_aq());
            (n > 0).then(|| {
                Triangle::zeros(SegmentSpec::new(key, window.first_aq, window.first_aq.offset(n as i64 - 1)))
            })
        })
        .collect();

    let mut simulated = Vec::new();
    if !shapes.is_empty() {
        let spec = model_spec(cfg, &shapes)?;
        let coefs = spec.align_coefficients(&named).map_err(input_err)?;
        let table = stack(&shapes, cfg.epoch).map_err(input_err)?;
        let design = build_design(&table, &spec).map_err(input_err)?;
        let counts = simulate_from_model(&coefs, &design.x, cfg.dispersion, cfg.seed).map_err(input_err)?;
        for shape in &shapes {
            let cells = design
                .rows
                .iter()
                .zip(&counts)
                .filter(|(o, _)| o.segment == shape.key())
                .map(|(o, &c)| (o.aq, o.j, c, 1.0));
            simulated.push(Triangle::from_cells(*shape.segment(), cells).map_err(input_err)?);
        }
    }

    let mut out = OutDir::create(&cfg.out)?;
    out.write_with("simulated_triangles.csv", |buf| write_triangles(buf, &simulated))?;
    let records: Vec<_> = simulated.iter().flat_map(replicate_records).collect();
    out.write_with("simulated_records.csv", |buf| write_breach_records(buf, &records))?;
    let mut summary = Vec::new();
    let _ = writeln!(summary, "seed={} dispersion={}", cfg.seed, cfg.dispersion);
    for t in &simulated {
        let _ = writeln!(summary, "{} {} aqs {} breaches", t.key(), t.n_aq(), t.total());
    }
    out.write("simulation.txt", &summary)?;
    println!(
        "simulated {} triangles, {} records into {}",
        simulated.len(),
        records.len(),
        cfg.out.display()
    );
    Ok(())
}
