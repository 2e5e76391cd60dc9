//! Simulation study harness, k-fold cross-validation, the least-squares
//! comparator and a synthetic pressure-drop generator.
//!
//! Each replicate draws its dataset and runs its chains on dedicated
//! ChaCha streams derived from one master seed, so results are identical
//! whatever the number of worker threads.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::basis::{uniform_grid, BasisSet};
use crate::data::{Dataset, SampleMetadata, TimeSeries};
use crate::error::{BnmrError, Result};
use crate::gibbs::{run_chain, run_chain_xy};
use crate::inference::{model_probabilities, posterior_curve, posterior_derivative, PosteriorSample};
use crate::model::ModelConfig;

/// Evaluation grid size for simulation metrics.
pub const EVAL_GRID_POINTS: usize = 100;
pub const DEFAULT_NOISE_SD: f64 = 0.25;

/// Stream offsets within a replicate.
pub const STREAM_DATA: u64 = 0;
pub const STREAM_FIT: u64 = 1;
pub const STREAM_ABLATION: u64 = 2;
const STREAMS_PER_REPLICATE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Flat,
    Linear,
    Wavy,
    FlatNonlinear,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [Self::Flat, Self::Linear, Self::Wavy, Self::FlatNonlinear];

    pub fn name(self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::Linear => "linear",
            Self::Wavy => "wavy",
            Self::FlatNonlinear => "flat_nonlinear",
        }
    }

    pub fn truth(self, x: f64) -> f64 {
        match self {
            Self::Flat => 0.0,
            Self::Linear => x,
            Self::Wavy => (3.0 * PI * x).sin() / (3.0 * PI) + x,
            Self::FlatNonlinear => {
                if x < 0.5 {
                    0.0
                } else {
                    let u = 2.0 * (x - 0.5);
                    u * u
                }
            }
        }
    }

    pub fn truth_derivative(self, x: f64) -> f64 {
        match self {
            Self::Flat => 0.0,
            Self::Linear => 1.0,
            Self::Wavy => (3.0 * PI * x).cos() + 1.0,
            Self::FlatNonlinear => {
                if x < 0.5 {
                    0.0
                } else {
                    8.0 * (x - 0.5)
                }
            }
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = BnmrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "linear" => Ok(Self::Linear),
            "wavy" => Ok(Self::Wavy),
            "flat_nonlinear" | "flat-nonlinear" => Ok(Self::FlatNonlinear),
            other => Err(BnmrError::Config(format!(
                "unknown scenario '{other}' (expected flat, linear, wavy or flat_nonlinear)"
            ))),
        }
    }
}

/// True regression function of a named scenario at `x ∈ [0, 1]`.
pub fn scenario_truth(name: &str, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(BnmrError::Domain(format!("x must lie in [0, 1], got {x}")));
    }
    Ok(name.parse::<ScenarioKind>()?.truth(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub noise_sd: f64,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, n: usize, noise_sd: f64) -> Result<Self> {
        if n < 10 {
            return Err(BnmrError::Config(format!("scenario needs n >= 10, got {n}")));
        }
        if !(noise_sd > 0.0 && noise_sd.is_finite()) {
            return Err(BnmrError::Config(format!(
                "noise sd must be positive, got {noise_sd}"
            )));
        }
        Ok(Self { kind, n, noise_sd })
    }

    /// Raw `(x, y)` with sorted uniform `x` and Gaussian noise.
    pub fn draw_xy<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut x: Vec<f64> = (0..self.n).map(|_| rng.random::<f64>()).collect();
        x.sort_by(f64::total_cmp);
        let y = x
            .iter()
            .map(|&xi| {
                let e: f64 = StandardNormal.sample(rng);
                self.kind.truth(xi) + self.noise_sd * e
            })
            .collect();
        (x, y)
    }
}

/// Draw a dataset and standardize it.
pub fn generate_dataset<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Dataset> {
    let (x, y) = scenario.draw_xy(rng);
    Dataset::from_xy(&x, &y)
}

/// Accuracy of one fit against the scenario truth, on the original scale.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub rmse_f: f64,
    pub rmse_deriv: f64,
    pub coverage_f: f64,
    pub coverage_deriv: f64,
    pub prob_flat: f64,
    pub prob_linear: f64,
    /// Posterior mean number of non-zero increments.
    pub n_nonzero_mean: f64,
    /// Posterior mean number of distinct non-zero increment values.
    pub n_unique_mean: f64,
}

impl MetricsReport {
    const FIELDS: [&'static str; 8] = [
        "rmse_f",
        "rmse_deriv",
        "coverage_f",
        "coverage_deriv",
        "prob_flat",
        "prob_linear",
        "n_nonzero_mean",
        "n_unique_mean",
    ];

    fn to_array(self) -> [f64; 8] {
        [
            self.rmse_f,
            self.rmse_deriv,
            self.coverage_f,
            self.coverage_deriv,
            self.prob_flat,
            self.prob_linear,
            self.n_nonzero_mean,
            self.n_unique_mean,
        ]
    }

    fn from_array(a: [f64; 8]) -> Self {
        Self {
            rmse_f: a[0],
            rmse_deriv: a[1],
            coverage_f: a[2],
            coverage_deriv: a[3],
            prob_flat: a[4],
            prob_linear: a[5],
            n_nonzero_mean: a[6],
            n_unique_mean: a[7],
        }
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Fraction of points whose band holds the truth. Zero-width bands count
/// as covering when they match the truth to rounding.
fn coverage(truth: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let hits = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|&(&t, (&l, &u))| {
            let tol = 1e-9 * (1.0 + t.abs());
            l - tol <= t && t <= u + tol
        })
        .count();
    hits as f64 / truth.len() as f64
}

/// Score a fit on `EVAL_GRID_POINTS` evenly spaced points spanning the
/// observed `x` range.
pub fn evaluate_fit(sample: &PosteriorSample, scenario: &Scenario) -> Result<MetricsReport> {
    let grid = uniform_grid(EVAL_GRID_POINTS);
    let curve = posterior_curve(sample, &grid)?;
    let deriv = posterior_derivative(sample, &grid)?;
    let truth: Vec<f64> = curve.grid.iter().map(|&x| scenario.kind.truth(x)).collect();
    let truth_d: Vec<f64> = curve
        .grid
        .iter()
        .map(|&x| scenario.kind.truth_derivative(x))
        .collect();
    let probs = model_probabilities(sample)?;
    let draws = sample.len() as f64;
    let m = sample.order;
    Ok(MetricsReport {
        rmse_f: rmse(&curve.mean, &truth),
        rmse_deriv: rmse(&deriv.mean, &truth_d),
        coverage_f: coverage(&truth, &curve.lower, &curve.upper),
        coverage_deriv: coverage(&truth_d, &deriv.lower, &deriv.upper),
        prob_flat: probs.flat,
        prob_linear: probs.linear,
        n_nonzero_mean: sample.draws_n0.iter().map(|&n0| (m - n0) as f64).sum::<f64>() / draws,
        n_unique_mean: sample.draws_k.iter().map(|&k| k as f64).sum::<f64>() / draws,
    })
}

/// Pooled out-of-fold RMSE on the original response scale.
///
/// Folds share the full-data standardization; held-out points are
/// predicted with the posterior-mean curve.
pub fn kfold_cv<R: Rng + ?Sized>(data: &Dataset, config: &ModelConfig, k: usize, rng: &mut R) -> Result<f64> {
    let n = data.len();
    if k < 2 {
        return Err(BnmrError::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(BnmrError::Config(format!(
            "{k} folds requested for {n} observations"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    let s = data.scaling;
    let mut sse = 0.0;
    for fold in 0..k {
        let (mut xt, mut yt, mut xh, mut yh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for ((&x, &y), &f) in data.x.iter().zip(&data.y).zip(&fold_of) {
            if f == fold {
                xh.push(x);
                yh.push(y);
            } else {
                xt.push(x);
                yt.push(y);
            }
        }
        let sample = run_chain_xy(config, &xt, &yt, s, rng)?;
        let pred = BasisSet::new(&xh, config.order)?.evaluate_f(&sample.mean_theta())?;
        sse += pred
            .iter()
            .zip(&yh)
            .map(|(&p, &y)| {
                let d = s.to_original_y(p) - s.to_original_y(y);
                d * d
            })
            .sum::<f64>();
    }
    Ok((sse / n as f64).sqrt())
}

/// Ordinary least-squares line, fitted on the original scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Two-sided t-test of zero slope.
    pub p_value: f64,
    /// Grid RMSE of the line and of its (constant) slope against a scenario truth.
    pub rmse_f: Option<f64>,
    pub rmse_deriv: Option<f64>,
}

pub fn ols_fit(data: &Dataset, truth: Option<ScenarioKind>) -> Result<OlsFit> {
    let x = data.original_x();
    let y = data.original_y();
    let n = x.len();
    if n < 3 {
        return Err(BnmrError::Data(format!("least squares needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let xm = x.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    if !(sxx > 0.0) {
        return Err(BnmrError::Data(
            "least squares needs at least two distinct x".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let p_value = if se > 0.0 {
        let t = (slope / se).abs();
        let dist = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| BnmrError::Numerical(e.to_string()))?;
        (2.0 * dist.sf(t)).min(1.0)
    } else if slope == 0.0 {
        1.0
    } else {
        0.0
    };
    let (rmse_f, rmse_deriv) = match truth {
        Some(kind) => {
            let s = data.scaling;
            let grid: Vec<f64> = uniform_grid(EVAL_GRID_POINTS)
                .into_iter()
                .map(|g| s.to_original_x(g))
                .collect();
            let fit: Vec<f64> = grid.iter().map(|&g| intercept + slope * g).collect();
            let tf: Vec<f64> = grid.iter().map(|&g| kind.truth(g)).collect();
            let td: Vec<f64> = grid.iter().map(|&g| kind.truth_derivative(g)).collect();
            (Some(rmse(&fit, &tf)), Some(rmse(&vec![slope; grid.len()], &td)))
        }
        None => (None, None),
    };
    Ok(OlsFit {
        slope,
        intercept,
        p_value,
        rmse_f,
        rmse_deriv,
    })
}

/// Settings for a replicated simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub scenario: Scenario,
    pub replicates: usize,
    pub config: ModelConfig,
    /// Also fit each replicate with clustering disabled.
    pub ablation: bool,
    /// Worker threads; `0` uses the rayon default.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub bnmr: MetricsReport,
    pub ablation: Option<MetricsReport>,
    pub ols: OlsFit,
}

/// Mean and standard error (`sd / √R`) of each metric over replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsAggregate {
    pub mean: MetricsReport,
    pub se: MetricsReport,
}

impl MetricsAggregate {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let r = reports.len() as f64;
        let rows: Vec<[f64; 8]> = reports.iter().map(|m| m.to_array()).collect();
        let mut mean = [0.0; 8];
        let mut se = [0.0; 8];
        for j in 0..8 {
            let m = rows.iter().map(|a| a[j]).sum::<f64>() / r;
            let var = if reports.len() > 1 {
                rows.iter().map(|a| (a[j] - m) * (a[j] - m)).sum::<f64>() / (r - 1.0)
            } else {
                0.0
            };
            mean[j] = m;
            se[j] = (var / r).sqrt();
        }
        Self {
            mean: MetricsReport::from_array(mean),
            se: MetricsReport::from_array(se),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub settings: SimulationSettings,
    pub replicates: Vec<ReplicateResult>,
}

/// Deterministic generator for stream `role` of replicate `rep`.
pub fn replicate_rng(seed: u64, rep: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 * STREAMS_PER_REPLICATE + role);
    rng
}

/// Run one replicate: generate, fit, optionally fit the ablation, fit OLS.
pub fn run_replicate(settings: &SimulationSettings, rep: usize) -> Result<ReplicateResult> {
    let seed = settings.config.seed;
    let data = generate_dataset(&settings.scenario, &mut replicate_rng(seed, rep, STREAM_DATA))?;
    let sample = run_chain(&settings.config, &data, &mut replicate_rng(seed, rep, STREAM_FIT))?;
    let bnmr = evaluate_fit(&sample, &settings.scenario)?;
    let ablation = if settings.ablation {
        let cfg = ModelConfig {
            clustering: false,
            ..settings.config.clone()
        };
        let s = run_chain(&cfg, &data, &mut replicate_rng(seed, rep, STREAM_ABLATION))?;
        Some(evaluate_fit(&s, &settings.scenario)?)
    } else {
        None
    };
    let ols = ols_fit(&data, Some(settings.scenario.kind))?;
    Ok(ReplicateResult {
        replicate: rep,
        bnmr,
        ablation,
        ols,
    })
}

/// Run every replicate, in parallel up to `settings.jobs` threads.
pub fn run_simulation(settings: &SimulationSettings) -> Result<SimulationReport> {
    settings.config.validate()?;
    if settings.replicates == 0 {
        return Err(BnmrError::Config("need at least one replicate".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| BnmrError::Config(format!("thread pool: {e}")))?;
    let replicates = pool.install(|| {
        (0..settings.replicates)
            .into_par_iter()
            .map(|rep| {
                let r = run_replicate(settings, rep);
                log::info!("replicate {} of {} done", rep + 1, settings.replicates);
                r
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SimulationReport {
        settings: settings.clone(),
        replicates,
    })
}

impl SimulationReport {
    pub fn bnmr(&self) -> MetricsAggregate {
        let v: Vec<MetricsReport> = self.replicates.iter().map(|r| r.bnmr).collect();
        MetricsAggregate::from_reports(&v)
    }

    pub fn ablation(&self) -> Option<MetricsAggregate> {
        let v: Option<Vec<MetricsReport>> = self.replicates.iter().map(|r| r.ablation).collect();
        v.map(|v| MetricsAggregate::from_reports(&v))
    }

    /// Fraction of replicates where the full model has strictly lower
    /// curve RMSE than the selection-only ablation.
    pub fn fraction_beating_ablation(&self) -> Option<f64> {
        let wins: Option<Vec<bool>> = self
            .replicates
            .iter()
            .map(|r| r.ablation.map(|a| r.bnmr.rmse_f < a.rmse_f))
            .collect();
        wins.map(|w| w.iter().filter(|&&b| b).count() as f64 / w.len() as f64)
    }

    pub fn mean_ols_p_value(&self) -> f64 {
        self.replicates.iter().map(|r| r.ols.p_value).sum::<f64>() / self.replicates.len() as f64
    }

    /// One row per replicate; RMSE columns are multiplied by 100.
    pub fn write_replicates_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| BnmrError::csv(path, e);
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record([
            "scenario",
            "n",
            "replicate",
            "rmse_f_x100",
            "coverage",
            "prob_flat",
            "prob_linear",
            "rmse_deriv_x100",
            "coverage_deriv",
            "n_nonzero_mean",
            "n_unique_mean",
            "ablation_rmse_f_x100",
            "ols_rmse_f_x100",
            "ols_p_value",
        ])
        .map_err(io)?;
        let sc = self.settings.scenario;
        for r in &self.replicates {
            let m = r.bnmr;
            let abl = r
                .ablation
                .map(|a| (100.0 * a.rmse_f).to_string())
                .unwrap_or_default();
            let ols = r.ols.rmse_f.map(|v| (100.0 * v).to_string()).unwrap_or_default();
            w.write_record([
                sc.kind.name().to_string(),
                sc.n.to_string(),
                r.replicate.to_string(),
                (100.0 * m.rmse_f).to_string(),
                m.coverage_f.to_string(),
                m.prob_flat.to_string(),
                m.prob_linear.to_string(),
                (100.0 * m.rmse_deriv).to_string(),
                m.coverage_deriv.to_string(),
                m.n_nonzero_mean.to_string(),
                m.n_unique_mean.to_string(),
                abl,
                ols,
                r.ols.p_value.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| BnmrError::io(path, e))
    }

    /// One row per method with means and standard errors over replicates.
    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| BnmrError::csv(path, e);
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec![
            "scenario".to_string(),
            "n".into(),
            "replicates".into(),
            "method".into(),
        ];
        for f in MetricsReport::FIELDS {
            header.push(f.to_string());
            header.push(format!("{f}_se"));
        }
        header.push("ols_p_value".into());
        w.write_record(&header).map_err(io)?;
        let sc = self.settings.scenario;
        let mut methods = vec![("bnmr", self.bnmr())];
        if let Some(a) = self.ablation() {
            methods.push(("selection_only", a));
        }
        for (name, agg) in methods {
            let mut row = vec![
                sc.kind.name().to_string(),
                sc.n.to_string(),
                self.replicates.len().to_string(),
                name.to_string(),
            ];
            for (m, s) in agg.mean.to_array().iter().zip(agg.se.to_array()) {
                row.push(m.to_string());
                row.push(s.to_string());
            }
            row.push(String::new());
            w.write_record(&row).map_err(io)?;
        }
        let ols_f: Vec<f64> = self.replicates.iter().filter_map(|r| r.ols.rmse_f).collect();
        let ols_d: Vec<f64> = self.replicates.iter().filter_map(|r| r.ols.rmse_deriv).collect();
        let mut ols = MetricsReport::default();
        let mut ols_se = MetricsReport::default();
        let mean_se = |v: &[f64]| {
            let a = MetricsAggregate::from_reports(
                &v.iter()
                    .map(|&x| MetricsReport {
                        rmse_f: x,
                        ..Default::default()
                    })
                    .collect::<Vec<_>>(),
            );
            (a.mean.rmse_f, a.se.rmse_f)
        };
        (ols.rmse_f, ols_se.rmse_f) = mean_se(&ols_f);
        (ols.rmse_deriv, ols_se.rmse_deriv) = mean_se(&ols_d);
        let mut row = vec![
            sc.kind.name().to_string(),
            sc.n.to_string(),
            self.replicates.len().to_string(),
            "ols".to_string(),
        ];
        for (j, (m, s)) in ols.to_array().iter().zip(ols_se.to_array()).enumerate() {
            if j < 2 {
                row.push(m.to_string());
                row.push(s.to_string());
            } else {
                row.push(String::new());
                row.push(String::new());
            }
        }
        row.push(self.mean_ols_p_value().to_string());
        w.write_record(&row).map_err(io)?;
        w.flush().map_err(|e| BnmrError::io(path, e))
    }
}

/// Parameters of a synthetic filter-loading run.
///
/// Pressure drop grows in proportion to the mass collected on the filter,
/// so its time derivative tracks the aerosol concentration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    /// Total length of the recording in minutes.
    pub duration_min: f64,
    pub step_min: f64,
    pub flow_rate_lpm: f64,
    /// Time-averaged concentration in µg·m⁻³.
    pub mean_concentration: f64,
    /// Pressure drop added per µg collected.
    pub pa_per_ug: f64,
    pub baseline_pa: f64,
    pub noise_sd_pa: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            duration_min: 8.0 * 60.0 + 35.0,
            step_min: 1.0,
            flow_rate_lpm: 1.0,
            mean_concentration: 1000.0,
            pa_per_ug: 0.05,
            baseline_pa: 120.0,
            noise_sd_pa: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub series: TimeSeries,
    /// True concentration (µg·m⁻³) at each timestamp.
    pub concentration: Vec<f64>,
    /// Mass collected over the whole recording, with the flow rate.
    pub metadata: SampleMetadata,
}

/// Relative concentration shape: a baseline with a midday episode.
fn concentration_shape(u: f64) -> f64 {
    0.6 + 1.2 * (-((u - 0.55) / 0.12).powi(2)).exp()
}

/// Simulate a pressure-drop recording with a known concentration history.
pub fn synthetic_pressure_drop<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<SyntheticRun> {
    if !(spec.duration_min > 0.0 && spec.step_min > 0.0 && spec.step_min < spec.duration_min) {
        return Err(BnmrError::Config(
            "synthetic run needs 0 < step < duration".into(),
        ));
    }
    if !(spec.flow_rate_lpm > 0.0 && spec.mean_concentration > 0.0 && spec.pa_per_ug > 0.0) {
        return Err(BnmrError::Config(
            "synthetic run needs positive flow, concentration and gain".into(),
        ));
    }
    let steps = (spec.duration_min / spec.step_min).round() as usize;
    let time: Vec<f64> = (0..=steps).map(|i| i as f64 * spec.step_min).collect();
    let shape: Vec<f64> = time
        .iter()
        .map(|&t| concentration_shape(t / spec.duration_min))
        .collect();
    // Normalize the shape to the requested time average (trapezoid rule).
    let mut integral = 0.0;
    for i in 1..time.len() {
        integral += 0.5 * (shape[i] + shape[i - 1]) * (time[i] - time[i - 1]);
    }
    let scale = spec.mean_concentration * spec.duration_min / integral;
    let concentration: Vec<f64> = shape.iter().map(|s| s * scale).collect();
    // µg·m⁻³ × L·min⁻¹ × min / (L per m³) = µg.
    let mut mass = vec![0.0; time.len()];
    for i in 1..time.len() {
        let c = 0.5 * (concentration[i] + concentration[i - 1]);
        mass[i] = mass[i - 1] + c * spec.flow_rate_lpm * (time[i] - time[i - 1]) / 1000.0;
    }
    let value: Vec<f64> = mass
        .iter()
        .map(|&m| {
            let e: f64 = StandardNormal.sample(rng);
            spec.baseline_pa + spec.pa_per_ug * m + spec.noise_sd_pa * e
        })
        .collect();
    Ok(SyntheticRun {
        series: TimeSeries::from_pairs(&time, &value)?,
        concentration,
        metadata: SampleMetadata {
            filter_mass_ug: mass.last().copied(),
            flow_rate_lpm: Some(spec.flow_rate_lpm),
            sample_id: Some("synthetic".into()),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn truths_at_checkpoints() {
        assert_relative_eq!(
            scenario_truth("wavy", 1.0 / 3.0).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_eq!(scenario_truth("flat_nonlinear", 0.75).unwrap(), 0.25);
        assert_eq!(scenario_truth("linear", 0.0).unwrap(), 0.0);
        assert_eq!(scenario_truth("flat", 0.3).unwrap(), 0.0);
        assert!(scenario_truth("quadratic", 0.3).is_err());
        assert!(scenario_truth("flat", 1.5).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for kind in ScenarioKind::ALL {
            for i in 1..20 {
                let x = i as f64 / 20.0 + 0.013;
                let fd = (kind.truth(x + h) - kind.truth(x - h)) / (2.0 * h);
                assert!((fd - kind.truth_derivative(x)).abs() < 1e-6, "{kind} at {x}");
            }
        }
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario::new(ScenarioKind::Flat, 9, 0.25).is_err());
        assert!(Scenario::new(ScenarioKind::Flat, 10, 0.0).is_err());
        assert!(Scenario::new(ScenarioKind::Flat, 10, 0.25).is_ok());
    }

    #[test]
    fn noise_sd_is_recovered() {
        let sc = Scenario::new(ScenarioKind::Wavy, 1_000_000, 0.25).unwrap();
        let (x, y) = sc.draw_xy(&mut ChaCha8Rng::seed_from_u64(3));
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(x.windows(2).all(|w| w[0] <= w[1]));
        let res: Vec<f64> = x.iter().zip(&y).map(|(&a, &b)| b - sc.kind.truth(a)).collect();
        let m = res.iter().sum::<f64>() / res.len() as f64;
        let sd = (res.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (res.len() - 1) as f64).sqrt();
        assert!((sd - 0.25).abs() < 1e-3, "{sd}");
    }

    #[test]
    fn generation_is_reproducible() {
        let sc = Scenario::new(ScenarioKind::Linear, 50, 0.25).unwrap();
        let a = generate_dataset(&sc, &mut replicate_rng(9, 2, 0)).unwrap();
        let b = generate_dataset(&sc, &mut replicate_rng(9, 2, 0)).unwrap();
        let c = generate_dataset(&sc, &mut replicate_rng(9, 3, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn oracle_sample_scores_perfectly() {
        // θ = (0, w, …, w) reproduces the line exactly on the unit scale.
        let order = 8;
        let sc = Scenario::new(ScenarioKind::Linear, 10, 0.25).unwrap();
        let mut theta = vec![1.0 / order as f64; order + 1];
        theta[0] = 0.0;
        let sample =
            PosteriorSample::from_theta_draws(&[theta.clone(), theta], crate::data::ScalingInfo::identity())
                .unwrap();
        let m = evaluate_fit(&sample, &sc).unwrap();
        assert!(m.rmse_f < 1e-12 && m.rmse_deriv < 1e-12);
        assert_eq!((m.coverage_f, m.coverage_deriv), (1.0, 1.0));
        assert_eq!((m.prob_flat, m.prob_linear), (0.0, 1.0));
        assert_eq!((m.n_nonzero_mean, m.n_unique_mean), (8.0, 1.0));
    }

    #[test]
    fn ols_exact_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = ols_fit(&Dataset::from_xy(&x, &y).unwrap(), None).unwrap();
        assert_relative_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!(fit.p_value < 1e-12);
        let shifted: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        let fit2 = ols_fit(&Dataset::from_xy(&x, &shifted).unwrap(), None).unwrap();
        assert_relative_eq!(fit2.slope, fit.slope, epsilon = 1e-12);
    }

    #[test]
    fn ols_p_values_are_uniform_under_flat_truth() {
        let sc = Scenario::new(ScenarioKind::Flat, 50, 0.25).unwrap();
        let reps = 2000;
        let mean_p = (0..reps)
            .map(|r| {
                let d = generate_dataset(&sc, &mut replicate_rng(11, r, 0)).unwrap();
                ols_fit(&d, Some(sc.kind)).unwrap().p_value
            })
            .sum::<f64>()
            / reps as f64;
        // Uniform p-values: mean 0.5, sd of the mean √(1/12/2000) ≈ 0.0065.
        assert!((mean_p - 0.5).abs() < 0.03, "{mean_p}");
    }

    #[test]
    fn aggregate_standard_errors() {
        let reports: Vec<MetricsReport> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&v| MetricsReport {
                rmse_f: v,
                ..Default::default()
            })
            .collect();
        let agg = MetricsAggregate::from_reports(&reports);
        assert_eq!(agg.mean.rmse_f, 2.5);
        // sd = √(5/3), se = sd / 2.
        assert_relative_eq!(agg.se.rmse_f, (5.0f64 / 3.0).sqrt() / 2.0, epsilon = 1e-15);
        assert_eq!(agg.se.coverage_f, 0.0);
    }

    #[test]
    fn synthetic_run_mass_and_monotone_trend() {
        let run =
            synthetic_pressure_drop(&SyntheticSpec::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let spec = SyntheticSpec::default();
        let mass = run.metadata.filter_mass_ug.unwrap();
        let expected = spec.mean_concentration * spec.flow_rate_lpm * spec.duration_min / 1000.0;
        assert_relative_eq!(mass, expected, max_relative = 1e-12);
        let n = run.series.len();
        assert_eq!(n, 516);
        assert!(run.series.value[n - 1] > run.series.value[0] + 10.0);
    }

    #[test]
    fn kfold_rejects_bad_fold_counts() {
        let x: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let y = vec![0.0, 1.0, 0.5, 2.0];
        let d = Dataset::from_xy(&x, &y).unwrap();
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(kfold_cv(&d, &cfg, 5, &mut rng).is_err());
        assert!(kfold_cv(&d, &cfg, 1, &mut rng).is_err());
    }
}
