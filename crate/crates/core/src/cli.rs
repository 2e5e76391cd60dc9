//! Command-line front end.
//!
//! Every command writes into one output directory together with a
//! `run_manifest.toml` recording the resolved configuration. Progress goes
//! to standard error; standard output carries `key=value` summary lines.
//! Configuration precedence is defaults, then `--config`, then flags.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::basis::uniform_grid;
use crate::data::{
    load_timeseries, standardize, trim_series, Dataset, SampleMetadata, ScalingInfo, DEFAULT_TIME_COLUMN,
    DEFAULT_TRIM_END_MIN, DEFAULT_TRIM_START_MIN, DEFAULT_VALUE_COLUMN,
};
use crate::error::{BnmrError, Result};
use crate::gibbs::run_chain;
use crate::inference::{
    chain_diagnostics, model_probabilities, posterior_curve, posterior_derivative, scaled_derivative,
    PosteriorSample,
};
use crate::model::{LabelScan, ModelConfig};
use crate::sim::{kfold_cv, replicate_rng, run_simulation, Scenario, ScenarioKind, SimulationSettings};

pub const MANIFEST_FILE: &str = "run_manifest.toml";

#[derive(Debug, Parser)]
#[command(name = "bnmr", version, about = "Bayesian nonparametric monotone regression")]
pub struct Cli {
    /// Suppress progress messages on standard error.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a monotone curve and write curve, derivative and diagnostics tables.
    Fit(FitArgs),
    /// Estimate time-resolved concentration from a pressure-drop series.
    Concentration(ConcentrationArgs),
    /// K-fold cross-validated prediction error.
    Cv(CvArgs),
    /// Replicated simulation study on a synthetic scenario.
    Simulate(SimulateArgs),
}

/// Overrides for any model configuration field.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelOverrides {
    /// TOML file of configuration values (flat `key = value`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, alias = "base_mean")]
    pub base_mean: Option<f64>,
    #[arg(long, alias = "base_sd")]
    pub base_sd: Option<f64>,
    #[arg(long, alias = "intercept_sd")]
    pub intercept_sd: Option<f64>,
    #[arg(long, alias = "sigma_shape")]
    pub sigma_shape: Option<f64>,
    #[arg(long, alias = "sigma_rate")]
    pub sigma_rate: Option<f64>,
    #[arg(long, alias = "pi_a")]
    pub pi_a: Option<f64>,
    #[arg(long, alias = "pi_b")]
    pub pi_b: Option<f64>,
    #[arg(long, alias = "alpha_shape")]
    pub alpha_shape: Option<f64>,
    #[arg(long, alias = "alpha_rate")]
    pub alpha_rate: Option<f64>,
    #[arg(long, alias = "n_iter")]
    pub n_iter: Option<usize>,
    #[arg(long, alias = "n_burn")]
    pub n_burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, alias = "eta_sweeps")]
    pub eta_sweeps: Option<usize>,
    /// `ascending` or `random`.
    #[arg(long, alias = "label_scan")]
    pub label_scan: Option<LabelScan>,
    #[arg(long)]
    pub clustering: Option<bool>,
    #[arg(long, alias = "warm_start")]
    pub warm_start: Option<bool>,
    #[arg(long, alias = "resync_every")]
    pub resync_every: Option<usize>,
}

impl ModelOverrides {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut c = match &self.config {
            Some(path) => ModelConfig::load(path)?,
            None => ModelConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$field = v; })*
            };
        }
        apply!(
            order,
            base_mean,
            base_sd,
            intercept_sd,
            sigma_shape,
            sigma_rate,
            pi_a,
            pi_b,
            alpha_shape,
            alpha_rate,
            n_iter,
            n_burn,
            thin,
            seed,
            eta_sweeps,
            label_scan,
            clustering,
            warm_start,
            resync_every
        );
        c.validate()?;
        Ok(c)
    }
}

/// Input series and preprocessing shared by the data-driven commands.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// CSV file with a header row.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value = DEFAULT_TIME_COLUMN)]
    pub time_col: String,
    #[arg(long, default_value = DEFAULT_VALUE_COLUMN)]
    pub value_col: String,
    /// Minutes dropped from the start of the series.
    #[arg(long, default_value_t = DEFAULT_TRIM_START_MIN)]
    pub trim_start: f64,
    /// Minutes dropped from the end of the series.
    #[arg(long, default_value_t = DEFAULT_TRIM_END_MIN)]
    pub trim_end: f64,
    /// Number of evenly spaced output grid points.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Debug, Args)]
pub struct ConcentrationArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Mass collected on the filter, µg.
    #[arg(long)]
    pub filter_mass_ug: Option<f64>,
    /// Sampling flow rate, L/min.
    #[arg(long)]
    pub flow_rate_lpm: Option<f64>,
    /// Sidecar metadata file; defaults to `<input stem>.meta.toml` when present.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// flat, linear, wavy or flat_nonlinear.
    #[arg(long)]
    pub scenario: String,
    /// Sample size per replicate (default 100, or 1000 with `--full-scale`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of replicates (default 50, or 500 with `--full-scale`).
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, default_value_t = crate::sim::DEFAULT_NOISE_SD)]
    pub noise_sd: f64,
    /// Also fit every replicate with clustering disabled.
    #[arg(long)]
    pub ablation: bool,
    /// Use the full study size instead of the desk-scale defaults.
    #[arg(long)]
    pub full_scale: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time_column: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value_column: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    observations: Option<usize>,
    extra: std::collections::BTreeMap<&'a str, toml::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling: Option<ScalingInfo>,
    config: &'a ModelConfig,
}

impl<'a> Manifest<'a> {
    fn new(command: &'a str, config: &'a ModelConfig) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            input: None,
            time_column: None,
            value_column: None,
            observations: None,
            extra: Default::default(),
            scaling: None,
            config,
        }
    }

    fn with_input(mut self, args: &'a InputArgs, data: &Dataset) -> Self {
        self.input = Some(args.input.display().to_string());
        self.time_column = Some(&args.time_col);
        self.value_column = Some(&args.value_col);
        self.observations = Some(data.len());
        self.scaling = Some(data.scaling);
        self.extra
            .insert("grid_points", toml::Value::Integer(args.grid as i64));
        self
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| BnmrError::Config(e.to_string()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| BnmrError::io(&path, e))
    }
}

/// Parse arguments, run, and map the outcome to a process exit code:
/// 0 success, 1 user or data error, 2 sampler failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_sampler_failure() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Concentration(a) => cmd_concentration(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BnmrError::io(dir, e))
}

fn load_dataset(args: &InputArgs, meta: Option<&SampleMetadata>) -> Result<Dataset> {
    if args.grid < 2 {
        return Err(BnmrError::Config("--grid needs at least 2 points".into()));
    }
    let raw = load_timeseries(&args.input, &args.time_col, &args.value_col)?;
    let trimmed = trim_series(&raw, args.trim_start, args.trim_end)?;
    log::info!(
        "{}: {} rows kept of {} after trimming ({} dropped as missing)",
        args.input.display(),
        trimmed.len(),
        raw.len(),
        raw.dropped_rows
    );
    standardize(
        &trimmed,
        meta.and_then(|m| m.filter_mass_ug),
        meta.and_then(|m| m.flow_rate_lpm),
    )
}

fn fit(data: &Dataset, config: &ModelConfig) -> Result<PosteriorSample> {
    log::info!(
        "sampling {} iterations (order {}, seed {})",
        config.n_iter,
        config.order,
        config.seed
    );
    let mut rng = replicate_rng(config.seed, 0, 0);
    let sample = run_chain(config, data, &mut rng)?;
    log::info!("kept {} draws", sample.len());
    Ok(sample)
}

/// Print `key=value` lines to standard output.
fn emit(pairs: &[(&str, String)]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for (k, v) in pairs {
        writeln!(out, "{k}={v}").map_err(|e| BnmrError::io("<stdout>", e))?;
    }
    Ok(())
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| BnmrError::csv(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| BnmrError::io(path, e))
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let config = args.model.resolve()?;
    let data = load_dataset(&args.input, None)?;
    let out = &args.input.out;
    prepare_output(out)?;
    let sample = fit(&data, &config)?;
    let grid = uniform_grid(args.input.grid);
    let value = &args.input.value_col;

    let curve = posterior_curve(&sample, &grid)?;
    curve.write_csv(out.join("curve.csv"), &format!("x: minutes; y: {value}"))?;
    let deriv = posterior_derivative(&sample, &grid)?;
    deriv.write_csv(
        out.join("derivative.csv"),
        &format!("x: minutes; y: {value} per minute"),
    )?;

    let diag = chain_diagnostics(&sample, &grid)?;
    let rows: Vec<Vec<String>> = diag
        .iter()
        .map(|d| vec![d.x.to_string(), d.ess.to_string(), d.lag1_autocorr.to_string()])
        .collect();
    write_rows(
        &out.join("diagnostics.csv"),
        &["x", "ess", "lag1_autocorr"],
        &rows,
    )?;

    let probs = model_probabilities(&sample)?;
    let draws = sample.len() as f64;
    let mean_k = sample.draws_k.iter().sum::<usize>() as f64 / draws;
    let mean_n0 = sample.draws_n0.iter().sum::<usize>() as f64 / draws;
    let mean_ess = diag.iter().map(|d| d.ess).sum::<f64>() / diag.len() as f64;
    write_rows(
        &out.join("posterior_meta.csv"),
        &[
            "prob_flat",
            "prob_linear",
            "mean_k",
            "mean_n0",
            "n_draws",
            "mean_ess",
        ],
        &[vec![
            probs.flat.to_string(),
            probs.linear.to_string(),
            mean_k.to_string(),
            mean_n0.to_string(),
            sample.len().to_string(),
            mean_ess.to_string(),
        ]],
    )?;
    Manifest::new("fit", &config)
        .with_input(&args.input, &data)
        .write(out)?;
    emit(&[
        ("prob_flat", probs.flat.to_string()),
        ("prob_linear", probs.linear.to_string()),
        ("mean_k", mean_k.to_string()),
        ("mean_n0", mean_n0.to_string()),
        ("n_draws", sample.len().to_string()),
        ("mean_ess", mean_ess.to_string()),
    ])
}

fn sidecar_path(input: &Path) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    input.with_file_name(format!("{stem}.meta.toml"))
}

/// Flags take precedence over the sidecar file.
fn resolve_metadata(args: &ConcentrationArgs) -> Result<SampleMetadata> {
    let mut meta = match &args.metadata {
        Some(p) => SampleMetadata::load(p)?,
        None => {
            let p = sidecar_path(&args.input.input);
            if p.is_file() {
                log::info!("reading sample metadata from {}", p.display());
                SampleMetadata::load(&p)?
            } else {
                SampleMetadata::default()
            }
        }
    };
    if args.filter_mass_ug.is_some() {
        meta.filter_mass_ug = args.filter_mass_ug;
    }
    if args.flow_rate_lpm.is_some() {
        meta.flow_rate_lpm = args.flow_rate_lpm;
    }
    for (name, v) in [
        ("filter mass", meta.filter_mass_ug),
        ("flow rate", meta.flow_rate_lpm),
    ] {
        match v {
            None => {
                return Err(BnmrError::Config(format!(
                    "{name} is required (flag or metadata file)"
                )))
            }
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(BnmrError::Config(format!("{name} must be positive, got {v}")))
            }
            _ => {}
        }
    }
    Ok(meta)
}

/// Trapezoid-rule average of `values` over `grid`.
fn time_average(grid: &[f64], values: &[f64]) -> f64 {
    let mut area = 0.0;
    for i in 1..grid.len() {
        area += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    area / (grid[grid.len() - 1] - grid[0])
}

pub fn cmd_concentration(args: &ConcentrationArgs) -> Result<()> {
    let config = args.model.resolve()?;
    let meta = resolve_metadata(args)?;
    let data = load_dataset(&args.input, Some(&meta))?;
    let out = &args.input.out;
    prepare_output(out)?;
    let sample = fit(&data, &config)?;
    let grid = uniform_grid(args.input.grid);
    let (mass, flow) = (
        meta.filter_mass_ug.unwrap_or(0.0),
        meta.flow_rate_lpm.unwrap_or(0.0),
    );
    let conc = scaled_derivative(&sample, &grid, mass, flow)?;
    if conc.excluded_flat > 0 {
        log::warn!(
            "{} of {} draws were flat and left out",
            conc.excluded_flat,
            sample.len()
        );
    }
    conc.curve
        .write_csv(out.join("concentration.csv"), "x: minutes; concentration: ug/m3")?;
    let average = time_average(&conc.curve.grid, &conc.curve.mean);
    let expected = mass / (flow * conc.duration) * 1000.0;
    let mut manifest = Manifest::new("concentration", &config).with_input(&args.input, &data);
    manifest.extra.insert("filter_mass_ug", toml::Value::Float(mass));
    manifest.extra.insert("flow_rate_lpm", toml::Value::Float(flow));
    manifest.write(out)?;
    emit(&[
        ("excluded_flat_draws", conc.excluded_flat.to_string()),
        ("used_draws", conc.used_draws.to_string()),
        ("duration_min", conc.duration.to_string()),
        ("time_averaged_concentration", average.to_string()),
        ("mass_balance_concentration", expected.to_string()),
    ])
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let config = args.model.resolve()?;
    let data = load_dataset(&args.input, None)?;
    if args.folds < 2 || args.folds > data.len() {
        return Err(BnmrError::Config(format!(
            "--folds must be between 2 and the number of observations ({}), got {}",
            data.len(),
            args.folds
        )));
    }
    let out = &args.input.out;
    prepare_output(out)?;
    log::info!("{}-fold cross-validation", args.folds);
    let mut rng = replicate_rng(config.seed, 0, 0);
    let rmse = kfold_cv(&data, &config, args.folds, &mut rng)?;
    write_rows(
        &out.join("cv.csv"),
        &["folds", "n", "cv_rmse"],
        &[vec![
            args.folds.to_string(),
            data.len().to_string(),
            rmse.to_string(),
        ]],
    )?;
    let mut manifest = Manifest::new("cv", &config).with_input(&args.input, &data);
    manifest
        .extra
        .insert("folds", toml::Value::Integer(args.folds as i64));
    manifest.write(out)?;
    emit(&[("folds", args.folds.to_string()), ("cv_rmse", rmse.to_string())])
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config = args.model.resolve()?;
    let kind: ScenarioKind = args.scenario.parse()?;
    let n = args.n.unwrap_or(if args.full_scale { 1000 } else { 100 });
    let replicates = args.replicates.unwrap_or(if args.full_scale { 500 } else { 50 });
    let settings = SimulationSettings {
        scenario: Scenario::new(kind, n, args.noise_sd)?,
        replicates,
        config: config.clone(),
        ablation: args.ablation,
        jobs: args.jobs,
    };
    prepare_output(&args.out)?;
    log::info!("simulating {replicates} replicates of '{kind}' with n = {n}");
    let report = run_simulation(&settings)?;
    report.write_replicates_csv(args.out.join("simulation.csv"))?;
    report.write_summary_csv(args.out.join("simulation_summary.csv"))?;
    let mut manifest = Manifest::new("simulate", &config);
    manifest
        .extra
        .insert("scenario", toml::Value::String(kind.name().into()));
    manifest.extra.insert("n", toml::Value::Integer(n as i64));
    manifest
        .extra
        .insert("replicates", toml::Value::Integer(replicates as i64));
    manifest
        .extra
        .insert("noise_sd", toml::Value::Float(args.noise_sd));
    manifest
        .extra
        .insert("ablation", toml::Value::Boolean(args.ablation));
    manifest.write(&args.out)?;

    let agg = report.bnmr();
    let mut pairs = vec![
        ("scenario", kind.name().to_string()),
        ("replicates", replicates.to_string()),
        ("rmse_f_x100", (100.0 * agg.mean.rmse_f).to_string()),
        ("coverage", agg.mean.coverage_f.to_string()),
        ("prob_flat", agg.mean.prob_flat.to_string()),
        ("prob_linear", agg.mean.prob_linear.to_string()),
        ("rmse_deriv_x100", (100.0 * agg.mean.rmse_deriv).to_string()),
        ("n_unique_mean", agg.mean.n_unique_mean.to_string()),
        ("ols_mean_p_value", report.mean_ols_p_value().to_string()),
    ];
    if let Some(f) = report.fraction_beating_ablation() {
        pairs.push(("fraction_beating_ablation", f.to_string()));
    }
    emit(&pairs)
}
