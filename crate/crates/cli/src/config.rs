//! Command-line flags, the optional key=value config file, and their
//! resolution into one validated run configuration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ibnr_core::analytics::DelayConvention;
use ibnr_core::design::DEFAULT_EPOCH;
use ibnr_core::{Quarter, QuarterRange, SegmentKey};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ibnr", version, about = "Reserving for data-breach notification counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Clean a breach-record file and aggregate it into triangles.
    Ingest,
    /// Fit an over-dispersed Poisson model to triangles.
    Fit,
    /// Complete the lower triangles from a fit.
    Project,
    /// Actual-versus-fitted tables and residual heatmaps for a fit.
    Diagnose,
    /// Frequency, pattern, delay, growth and trend outputs for a fit.
    Report,
    /// Draw synthetic triangles and records from a model.
    Simulate,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Flags {
    /// Flat key=value file; keys mirror the long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated segment codes such as CA500,IN1 (default: all 15).
    #[arg(long, global = true)]
    pub segment: Option<String>,
    /// `published`, `cross-classified`, or a model-spec file.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Accident quarter given index 1 by AQ-indexed terms.
    #[arg(long, global = true)]
    pub epoch: Option<String>,
    /// Development quarters to project to.
    #[arg(long, global = true)]
    pub horizon: Option<String>,
    /// `dq` or `dq-half`.
    #[arg(long = "delay-convention", global = true)]
    pub delay_convention: Option<String>,
    /// Output directory; also where later commands find fit artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed for `simulate` (default 0).
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Record file for `ingest`, triangle file for `fit`.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Coefficient table for `simulate` (default: the published table).
    #[arg(long, global = true)]
    pub coefficients: Option<PathBuf>,
    /// Dispersion for `simulate`, at least 1.
    #[arg(long, global = true)]
    pub dispersion: Option<String>,
    /// Accident quarters per segment for `simulate` (default: full window).
    #[arg(long, global = true)]
    pub quarters: Option<String>,
    /// Base window of the frequency index, e.g. 2015Q4-2016Q3.
    #[arg(long, global = true)]
    pub base: Option<String>,
    /// Read only ISO and M/D/YYYY dates in `ingest`.
    #[arg(long = "strict-dates", global = true)]
    pub strict_dates: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelChoice {
    Published,
    CrossClassified,
    File(PathBuf),
}

/// Everything a command needs, after merging flags over the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub segments: Vec<SegmentKey>,
    /// Segments were named explicitly rather than defaulted.
    pub segments_given: bool,
    pub model: ModelChoice,
    pub epoch: Quarter,
    pub horizon: Option<usize>,
    pub delay_convention: DelayConvention,
    pub out: PathBuf,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub coefficients: Option<PathBuf>,
    pub dispersion: f64,
    pub quarters: Option<usize>,
    pub base: QuarterRange,
    pub strict_dates: bool,
}

pub const DEFAULT_BASE: QuarterRange = QuarterRange {
    first: Quarter::of(2015, 4),
    last: Quarter::of(2016, 3),
};

const CONFIG_KEYS: [&str; 13] = [
    "segment",
    "model",
    "epoch",
    "horizon",
    "delay-convention",
    "out",
    "seed",
    "input",
    "coefficients",
    "dispersion",
    "quarters",
    "base",
    "strict-dates",
];

fn read_config(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Input(format!("config {}:{}: expected key=value", path.display(), n + 1))
        })?;
        let k = k.trim().replace('_', "-");
        if !CONFIG_KEYS.contains(&k.as_str()) {
            return Err(CliError::Input(format!(
                "config {}:{}: unknown key `{k}`",
                path.display(),
                n + 1
            )));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| CliError::Input(format!("invalid --{what} `{s}`: {e}")))
}

pub fn parse_segments(s: &str) -> Result<Vec<SegmentKey>, CliError> {
    let mut out: Vec<SegmentKey> = Vec::new();
    for code in s.split(',').map(str::trim).filter(|c| !c.is_empty()) {
        let key: SegmentKey = parse("segment", code)?;
        if !out.contains(&key) {
            out.push(key);
        }
    }
    if out.is_empty() {
        return Err(CliError::Input("--segment names no segment".into()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => read_config(p)?,
            None => HashMap::new(),
        };
        let pick = |flag: &Option<String>, key: &str| flag.clone().or_else(|| file.get(key).cloned());
        let pick_path = |flag: &Option<PathBuf>, key: &str| {
            flag.clone().or_else(|| file.get(key).map(PathBuf::from))
        };

        let segment = pick(&flags.segment, "segment");
        let segments = match &segment {
            Some(s) => parse_segments(s)?,
            None => SegmentKey::ALL.to_vec(),
        };
        let model = match pick(&flags.model, "model").as_deref() {
            None | Some("published") => ModelChoice::Published,
            Some("cross-classified") => ModelChoice::CrossClassified,
            Some(path) => ModelChoice::File(PathBuf::from(path)),
        };
        let epoch = match pick(&flags.epoch, "epoch") {
            Some(s) => parse("epoch", &s)?,
            None => DEFAULT_EPOCH,
        };
        let horizon = pick(&flags.horizon, "horizon")
            .map(|s| parse::<usize>("horizon", &s))
            .transpose()?;
        let delay_convention = match pick(&flags.delay_convention, "delay-convention") {
            Some(s) => parse("delay-convention", &s)?,
            None => DelayConvention::default(),
        };
        let seed = match pick(&flags.seed, "seed") {
            Some(s) => parse("seed", &s)?,
            None => 0,
        };
        let dispersion = match pick(&flags.dispersion, "dispersion") {
            Some(s) => parse("dispersion", &s)?,
            None => 1.0,
        };
        let quarters = pick(&flags.quarters, "quarters")
            .map(|s| parse::<usize>("quarters", &s))
            .transpose()?;
        let base = match pick(&flags.base, "base") {
            Some(s) => parse("base", &s)?,
            None => DEFAULT_BASE,
        };
        let strict_dates = flags.strict_dates
            || file
                .get("strict-dates")
                .is_some_and(|v| matches!(v.as_str(), "true" | "yes" | "1"));

        let input = pick_path(&flags.input, "input");
        let coefficients = pick_path(&flags.coefficients, "coefficients");
        for p in input.iter().chain(&coefficients) {
            if !p.exists() {
                return Err(CliError::Input(format!("{}: no such file", p.display())));
            }
        }
        if let ModelChoice::File(p) = &model {
            if !p.exists() {
                return Err(CliError::Input(format!("model spec {}: no such file", p.display())));
            }
        }

        Ok(Self {
            segments,
            segments_given: segment.is_some(),
            model,
            epoch,
            horizon,
            delay_convention,
            out: pick_path(&flags.out, "out").unwrap_or_else(|| PathBuf::from("ibnr-out")),
            seed,
            input,
            coefficients,
            dispersion,
            quarters,
            base,
            strict_dates,
        })
    }
}
