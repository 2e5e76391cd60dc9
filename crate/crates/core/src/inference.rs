//! Posterior functionals: the fitted curve, its derivative, the mass-scaled
//! derivative (aerosol concentration), model probabilities and chain
//! diagnostics.
//!
//! Every summary is pointwise: a posterior mean and an equal-tailed 95%
//! band from empirical quantiles (linear interpolation between order
//! statistics). When a skewed pointwise posterior puts the mean outside the
//! quantile band, the band is widened to contain it so that
//! `lower ≤ mean ≤ upper` always holds.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::BasisSet;
use crate::data::ScalingInfo;
use crate::error::{BnmrError, Result};
use crate::model::ModelConfig;

/// Litres per cubic metre.
const LITRES_PER_M3: f64 = 1000.0;

/// Retained draws from one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub order: usize,
    /// One row per retained draw, `M + 1` columns.
    pub draws_theta: DMatrix<f64>,
    pub draws_sigma2: Vec<f64>,
    pub draws_alpha: Vec<f64>,
    /// Null-cluster size `n₀` per draw.
    pub draws_n0: Vec<usize>,
    /// Number of non-zero clusters `K` per draw.
    pub draws_k: Vec<usize>,
    pub draws_labels: Vec<Vec<usize>>,
    pub draws_loglik: Vec<f64>,
    pub config: ModelConfig,
    pub scaling: ScalingInfo,
}

impl PosteriorSample {
    pub(crate) fn empty(order: usize, config: ModelConfig, scaling: ScalingInfo) -> Self {
        Self {
            order,
            draws_theta: DMatrix::zeros(0, order + 1),
            draws_sigma2: Vec::new(),
            draws_alpha: Vec::new(),
            draws_n0: Vec::new(),
            draws_k: Vec::new(),
            draws_labels: Vec::new(),
            draws_loglik: Vec::new(),
            config,
            scaling,
        }
    }

    /// Assemble a sample from explicit `θ` draws; labels, `n₀` and `K` are
    /// derived from the zero pattern and the distinct non-zero values.
    pub fn from_theta_draws(thetas: &[Vec<f64>], scaling: ScalingInfo) -> Result<Self> {
        let order = thetas.first().map(|t| t.len()).ok_or(BnmrError::EmptySample)? - 1;
        let config = ModelConfig {
            order,
            ..ModelConfig::default()
        };
        let mut sample = Self::empty(order, config, scaling);
        let mut rows = Vec::with_capacity(thetas.len() * (order + 1));
        for theta in thetas {
            if theta.len() != order + 1 {
                return Err(BnmrError::DimensionMismatch {
                    expected: order + 1,
                    actual: theta.len(),
                });
            }
            if theta[1..].iter().any(|&t| t < 0.0) {
                return Err(BnmrError::Domain("increments must be nonnegative".into()));
            }
            let mut values: Vec<f64> = Vec::new();
            let labels: Vec<usize> = theta[1..]
                .iter()
                .map(|&t| {
                    if t == 0.0 {
                        0
                    } else if let Some(i) = values.iter().position(|&v| v == t) {
                        i + 1
                    } else {
                        values.push(t);
                        values.len()
                    }
                })
                .collect();
            sample.draws_n0.push(labels.iter().filter(|&&s| s == 0).count());
            sample.draws_k.push(values.len());
            sample.draws_labels.push(labels);
            sample.draws_sigma2.push(1.0);
            sample.draws_alpha.push(1.0);
            sample.draws_loglik.push(0.0);
            rows.extend_from_slice(theta);
        }
        sample.draws_theta = DMatrix::from_row_slice(thetas.len(), order + 1, &rows);
        Ok(sample)
    }

    pub fn len(&self) -> usize {
        self.draws_theta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, draw: usize) -> Vec<f64> {
        self.draws_theta.row(draw).iter().copied().collect()
    }

    /// Posterior mean of `θ`.
    pub fn mean_theta(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.draws_theta.row_sum().iter().map(|s| s / n).collect()
    }

    /// `f` for every draw on `grid`, as a `grid × draws` matrix on the
    /// standardized scale.
    pub fn f_draws(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        self.require_draws()?;
        let basis = BasisSet::new(grid, self.order)?;
        Ok(&basis.lambda * self.draws_theta.transpose())
    }

    /// `f'` for every draw on `grid` (standardized scale, unit-interval `x`).
    pub fn derivative_draws(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        self.require_draws()?;
        let basis = BasisSet::new(grid, self.order)?;
        let increments = self.draws_theta.columns(1, self.order);
        Ok(&basis.dpsi * increments.transpose())
    }

    fn require_draws(&self) -> Result<()> {
        if self.is_empty() {
            Err(BnmrError::EmptySample)
        } else {
            Ok(())
        }
    }
}

/// Pointwise posterior summary of a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_row(values: &mut [f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let lower = quantile_sorted(values, 0.025).min(mean);
    let upper = quantile_sorted(values, 0.975).max(mean);
    (mean, lower, upper)
}

impl CurveSummary {
    /// Summarize a `grid × draws` matrix, mapping values through `transform`
    /// (which must be nondecreasing).
    fn from_draws(grid: Vec<f64>, draws: &DMatrix<f64>, transform: impl Fn(f64) -> f64) -> Self {
        let mut out = Self {
            grid,
            mean: Vec::with_capacity(draws.nrows()),
            lower: Vec::with_capacity(draws.nrows()),
            upper: Vec::with_capacity(draws.nrows()),
        };
        let mut buf = Vec::with_capacity(draws.ncols());
        for row in draws.row_iter() {
            buf.clear();
            buf.extend(row.iter().map(|&v| transform(v)));
            let (m, l, u) = summarize_row(&mut buf);
            out.mean.push(m);
            out.lower.push(l);
            out.upper.push(u);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Write `x,mean,lower95,upper95` with a leading `#` comment line.
    pub fn write_csv(&self, path: impl AsRef<Path>, comment: &str) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| BnmrError::io(path, e))?;
        writeln!(file, "# {comment}").map_err(|e| BnmrError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let io = |e: csv::Error| BnmrError::csv(path, e);
        w.write_record(["x", "mean", "lower95", "upper95"]).map_err(io)?;
        for i in 0..self.len() {
            w.write_record([
                self.grid[i].to_string(),
                self.mean[i].to_string(),
                self.lower[i].to_string(),
                self.upper[i].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| BnmrError::io(path, e))?;
        Ok(())
    }
}

/// Posterior summary of `f` on `grid` (unit-interval `x`), reported in the
/// original time and response units.
pub fn posterior_curve(sample: &PosteriorSample, grid: &[f64]) -> Result<CurveSummary> {
    let draws = sample.f_draws(grid)?;
    let s = sample.scaling;
    let x = grid.iter().map(|&g| s.to_original_x(g)).collect();
    Ok(CurveSummary::from_draws(x, &draws, |v| s.to_original_y(v)))
}

/// Posterior summary of `df/dt` on `grid`, in response units per time unit.
pub fn posterior_derivative(sample: &PosteriorSample, grid: &[f64]) -> Result<CurveSummary> {
    let draws = sample.derivative_draws(grid)?;
    let s = sample.scaling;
    let factor = s.slope_factor();
    let x = grid.iter().map(|&g| s.to_original_x(g)).collect();
    Ok(CurveSummary::from_draws(x, &draws, |v| v * factor))
}

/// Derivative draws rescaled so that each integrates over `[0, 1]` to
/// `filter_mass / flow_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDraws {
    /// `grid × used draws`, in `filter_mass / flow_rate` per unit of scaled time.
    pub values: DMatrix<f64>,
    /// Draws left out because every increment was zero.
    pub excluded_flat: usize,
}

pub fn scaled_derivative_draws(
    sample: &PosteriorSample,
    grid: &[f64],
    filter_mass: f64,
    flow_rate: f64,
) -> Result<ScaledDraws> {
    if !(filter_mass > 0.0 && filter_mass.is_finite()) {
        return Err(BnmrError::Domain(format!(
            "filter mass must be positive, got {filter_mass}"
        )));
    }
    if !(flow_rate > 0.0 && flow_rate.is_finite()) {
        return Err(BnmrError::Domain(format!(
            "flow rate must be positive, got {flow_rate}"
        )));
    }
    let raw = sample.derivative_draws(grid)?;
    let totals: Vec<f64> = sample
        .draws_theta
        .row_iter()
        .map(|row| row.iter().skip(1).sum())
        .collect();
    let used: Vec<usize> = (0..totals.len()).filter(|&d| totals[d] > 0.0).collect();
    if used.is_empty() {
        return Err(BnmrError::FlatPosterior);
    }
    let target = filter_mass / flow_rate;
    let values = DMatrix::from_fn(grid.len(), used.len(), |i, j| {
        let d = used[j];
        raw[(i, d)] * target / totals[d]
    });
    Ok(ScaledDraws {
        values,
        excluded_flat: totals.len() - used.len(),
    })
}

/// Concentration summary from the mass-scaled derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationSummary {
    /// Time axis in minutes, concentration in µg·m⁻³.
    pub curve: CurveSummary,
    pub excluded_flat: usize,
    pub used_draws: usize,
    /// Fitted duration in minutes.
    pub duration: f64,
}

/// Time-resolved concentration (µg·m⁻³) from filter mass (µg) and flow
/// rate (L·min⁻¹). The fitted time axis must be in minutes.
pub fn scaled_derivative(
    sample: &PosteriorSample,
    grid: &[f64],
    filter_mass_ug: f64,
    flow_rate_lpm: f64,
) -> Result<ConcentrationSummary> {
    let scaled = scaled_derivative_draws(sample, grid, filter_mass_ug, flow_rate_lpm)?;
    let s = sample.scaling;
    let duration = s.x_range();
    let factor = LITRES_PER_M3 / duration;
    let x = grid.iter().map(|&g| s.to_original_x(g)).collect();
    Ok(ConcentrationSummary {
        curve: CurveSummary::from_draws(x, &scaled.values, |v| v * factor),
        excluded_flat: scaled.excluded_flat,
        used_draws: scaled.values.ncols(),
        duration,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelProbabilities {
    /// Fraction of draws with every increment zero.
    pub flat: f64,
    /// Fraction of draws with every increment non-zero and equal.
    pub linear: f64,
}

pub fn model_probabilities(sample: &PosteriorSample) -> Result<ModelProbabilities> {
    if sample.is_empty() {
        return Err(BnmrError::EmptySample);
    }
    let n = sample.len() as f64;
    let m = sample.order;
    let flat = sample.draws_n0.iter().filter(|&&n0| n0 == m).count() as f64 / n;
    let linear = sample
        .draws_n0
        .iter()
        .zip(&sample.draws_k)
        .filter(|&(&n0, &k)| n0 == 0 && k == 1)
        .count() as f64
        / n;
    Ok(ModelProbabilities { flat, linear })
}

/// Sample autocorrelation at `lag` (biased autocovariance over the variance).
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    let n = series.len();
    if lag >= n {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var <= 0.0 {
        return 0.0;
    }
    let cov: f64 = series[..n - lag]
        .iter()
        .zip(&series[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    (cov / var).clamp(-1.0, 1.0)
}

/// Effective sample size from Geyer's initial positive sequence: lag pairs
/// `ρ_{2m} + ρ_{2m+1}` are summed until the first negative pair.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var: f64 = centred.iter().map(|v| v * v).sum();
    if var <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / var
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64 * (n as f64).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    /// Grid point in original time units.
    pub x: f64,
    pub ess: f64,
    pub lag1_autocorr: f64,
}

/// ESS and lag-1 autocorrelation of the `f` draws at each grid point.
pub fn chain_diagnostics(sample: &PosteriorSample, grid: &[f64]) -> Result<Vec<DiagnosticRow>> {
    let draws = sample.f_draws(grid)?;
    let s = sample.scaling;
    Ok(grid
        .iter()
        .zip(draws.row_iter())
        .map(|(&g, row)| {
            let series: Vec<f64> = row.iter().copied().collect();
            DiagnosticRow {
                x: s.to_original_x(g),
                ess: effective_sample_size(&series),
                lag1_autocorr: autocorrelation(&series, 1),
            }
        })
        .collect())
}
