//! Collapsed Gibbs sampler over increment labels, cluster values, residual
//! variance and the DP concentration.
//!
//! Both the zero-inflation weight `π` and the random measure `P` are
//! integrated out, so each increment label `S_k` is drawn from a Pólya-urn
//! style categorical with three kinds of outcome:
//!
//! * the null cluster, prior weight `(n₀* + a_π) / (M - 1 + a_π + b_π)`;
//! * an existing cluster `c`, prior weight
//!   `(M - n₀* - 1 + b_π) n_c* / ((M - 1 + a_π + b_π)(M - n₀* - 1 + α))`;
//! * a fresh cluster, the same weight with `α` in place of `n_c*`, times the
//!   likelihood integrated against the truncated-normal base measure.
//!
//! Starred counts exclude coefficient `k`. The DP urn runs over the `M`
//! coefficient slots, so `M - n₀* - 1 + α` appears in both non-null cases.
//!
//! Given the labels, the intercept and the distinct cluster values form a
//! normal block truncated below at zero (except the intercept), updated by
//! coordinate Gibbs sweeps. `σ⁻²` has a conjugate gamma update and `α` uses
//! the Escobar–West auxiliary variable scheme, counting only the non-null
//! coefficients.
//!
//! Log-likelihood differences between candidate labels only depend on
//! `Λ_kᵀ r_{-k}` and `‖Λ_k‖²`, where `r_{-k}` is the residual with `θ_k`
//! removed, so each label update costs `O(n + K)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::basis::BasisSet;
use crate::data::{Dataset, ScalingInfo};
use crate::error::{BnmrError, Result};
use crate::inference::PosteriorSample;
use crate::model::{initial_state, ChainState, LabelScan, ModelConfig};
use crate::samplers::{log_normal_cdf, sample_gamma, truncated_mvn_sweeps, TruncatedNormal};

/// The closed-form integral over a fresh cluster value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewClusterMarginal {
    /// `ln ∫₀^∞ exp(ℓ(t) - ℓ(0)) TN(t; μ, φ²) dt` where `ℓ(t)` is the
    /// Gaussian log-likelihood with `θ_k = t`.
    pub log_marginal: f64,
    /// Mean `m̃` of the (untruncated) conditional for the fresh value.
    pub mean: f64,
    /// Variance `ṽ` of the same conditional.
    pub variance: f64,
}

/// Integrate the likelihood contribution of one coefficient against the
/// base measure.
///
/// `cross = Λ_kᵀ r_{-k}` and `norm_sq = ‖Λ_k‖²`.
pub fn new_cluster_log_marginal(
    cross: f64,
    norm_sq: f64,
    sigma2: f64,
    base_mean: f64,
    base_sd: f64,
) -> NewClusterMarginal {
    let prior_prec = 1.0 / (base_sd * base_sd);
    let variance = 1.0 / (prior_prec + norm_sq / sigma2);
    let mean = variance * (prior_prec * base_mean + cross / sigma2);
    let log_marginal = 0.5 * mean * mean / variance - 0.5 * base_mean * base_mean * prior_prec
        + 0.5 * variance.ln()
        - base_sd.ln()
        + log_normal_cdf(mean / variance.sqrt())
        - log_normal_cdf(base_mean / base_sd);
    NewClusterMarginal {
        log_marginal,
        mean,
        variance,
    }
}

/// One outcome of a label update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelChoice {
    Null,
    /// Join the existing cluster with this id.
    Existing(usize),
    /// Open a cluster whose value is drawn from `TN_[0,∞)(mean, variance)`.
    New {
        mean: f64,
        variance: f64,
    },
}

/// Scratch state kept alongside a chain.
#[derive(Debug, Clone)]
pub struct GibbsWorkspace {
    /// `y - Λθ`, maintained incrementally.
    pub residual: Vec<f64>,
    /// `Σ_i Λ_ik²` per column.
    pub column_norms: Vec<f64>,
    pub log_prob_buffer: Vec<f64>,
    choice_buffer: Vec<LabelChoice>,
    gram: DMatrix<f64>,
    lambda_t_y: Vec<f64>,
}

impl GibbsWorkspace {
    fn new(basis: &BasisSet, y: &[f64], theta: &[f64]) -> Self {
        let gram = basis.lambda.tr_mul(&basis.lambda);
        let column_norms = gram.diagonal().iter().copied().collect();
        let mut ws = Self {
            residual: vec![0.0; y.len()],
            column_norms,
            log_prob_buffer: Vec::new(),
            choice_buffer: Vec::new(),
            gram,
            lambda_t_y: Vec::new(),
        };
        ws.set_response(basis, y, theta);
        ws
    }

    fn set_response(&mut self, basis: &BasisSet, y: &[f64], theta: &[f64]) {
        let yv = DVector::from_column_slice(y);
        self.lambda_t_y = basis.lambda.tr_mul(&yv).iter().copied().collect();
        self.resync(basis, y, theta);
    }

    fn resync(&mut self, basis: &BasisSet, y: &[f64], theta: &[f64]) {
        let fitted = basis.evaluate_f(theta).expect("theta length fixed by order");
        for ((r, &yi), f) in self.residual.iter_mut().zip(y).zip(fitted) {
            *r = yi - f;
        }
    }
}

fn column(basis: &BasisSet, k: usize) -> &[f64] {
    let n = basis.len();
    &basis.lambda.as_slice()[k * n..(k + 1) * n]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Sample an index from unnormalized log weights.
fn sample_log_categorical<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let total: f64 = log_w.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in log_w.iter().enumerate() {
        u -= (w - max).exp();
        if u <= 0.0 {
            return Some(i);
        }
    }
    log_w.iter().rposition(|w| w.is_finite())
}

/// A single chain: data, basis, current state and workspace.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: ModelConfig,
    basis: BasisSet,
    y: Vec<f64>,
    state: ChainState,
    ws: GibbsWorkspace,
    iteration: usize,
}

impl Sampler {
    /// Set up a chain on `(x, y)` with `x` in `[0, 1]` and `y` on the
    /// standardized scale.
    pub fn new(config: ModelConfig, x: &[f64], y: &[f64], start: ChainState) -> Result<Self> {
        config.validate()?;
        if x.len() != y.len() {
            return Err(BnmrError::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        if start.order() != config.order {
            return Err(BnmrError::DimensionMismatch {
                expected: config.order,
                actual: start.order(),
            });
        }
        start.check_invariants()?;
        let basis = BasisSet::new(x, config.order)?;
        let ws = GibbsWorkspace::new(&basis, y, &start.theta);
        Ok(Self {
            config,
            basis,
            y: y.to_vec(),
            state: start,
            ws,
            iteration: 0,
        })
    }

    pub fn for_dataset(config: ModelConfig, data: &Dataset) -> Result<Self> {
        let start = initial_state(&config, data);
        Self::new(config, &data.x, &data.y, start)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn workspace(&self) -> &GibbsWorkspace {
        &self.ws
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    /// Swap in a new response vector, keeping the current parameters.
    pub fn set_response(&mut self, y: Vec<f64>) -> Result<()> {
        if y.len() != self.y.len() {
            return Err(BnmrError::DimensionMismatch {
                expected: self.y.len(),
                actual: y.len(),
            });
        }
        self.y = y;
        self.ws.set_response(&self.basis, &self.y, &self.state.theta);
        Ok(())
    }

    pub fn resync_residual(&mut self) {
        self.ws.resync(&self.basis, &self.y, &self.state.theta);
    }

    /// Largest absolute gap between the maintained residual and `y - Λθ`.
    pub fn residual_drift(&self) -> f64 {
        let fitted = self.basis.evaluate_f(&self.state.theta).expect("valid theta");
        self.ws
            .residual
            .iter()
            .zip(&self.y)
            .zip(fitted)
            .map(|((r, y), f)| (r - (y - f)).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum_sq_residual(&self) -> f64 {
        self.ws.residual.iter().map(|r| r * r).sum()
    }

    pub fn log_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        let s2 = self.state.sigma2;
        -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * self.sum_sq_residual() / s2
    }

    /// Unnormalized log weights of the full conditional for `S_k`, `k` in `1..=M`.
    ///
    /// Weights are relative to the likelihood with `θ_k = 0`.
    pub fn label_log_weights(&self, k: usize) -> Vec<(LabelChoice, f64)> {
        let mut choices = Vec::new();
        let mut weights = Vec::new();
        self.fill_label_weights(k, &mut choices, &mut weights);
        choices.into_iter().zip(weights).collect()
    }

    /// Normalized full conditional for `S_k`.
    pub fn label_probabilities(&self, k: usize) -> Vec<(LabelChoice, f64)> {
        let weights = self.label_log_weights(k);
        let max = weights.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = weights.iter().map(|w| (w.1 - max).exp()).sum();
        weights
            .into_iter()
            .map(|(c, w)| (c, (w - max).exp() / total))
            .collect()
    }

    fn fill_label_weights(&self, k: usize, choices: &mut Vec<LabelChoice>, log_w: &mut Vec<f64>) {
        choices.clear();
        log_w.clear();
        let cfg = &self.config;
        let state = &self.state;
        let order = cfg.order as f64;
        let current = state.labels[k - 1];

        let mut sizes = state.cluster_sizes();
        let mut n_null = state.n_null();
        if current == 0 {
            n_null -= 1;
        } else {
            sizes[current - 1] -= 1;
        }
        let n_null = n_null as f64;

        let norm_sq = self.ws.column_norms[k];
        let cross = dot(column(&self.basis, k), &self.ws.residual) + norm_sq * state.theta[k];
        let s2 = state.sigma2;

        let log_denom = (order - 1.0 + cfg.pi_a + cfg.pi_b).ln();
        choices.push(LabelChoice::Null);
        log_w.push((n_null + cfg.pi_a).ln() - log_denom);

        let log_nonnull = (order - n_null - 1.0 + cfg.pi_b).ln() - log_denom;
        let marginal = new_cluster_log_marginal(cross, norm_sq, s2, cfg.base_mean, cfg.base_sd);
        let fresh = LabelChoice::New {
            mean: marginal.mean,
            variance: marginal.variance,
        };

        if cfg.clustering {
            let log_urn = (order - n_null - 1.0 + state.alpha).ln();
            for (c, (&size, &eta)) in sizes.iter().zip(&state.eta).enumerate() {
                if size == 0 {
                    continue;
                }
                let loglik = (eta * cross - 0.5 * eta * eta * norm_sq) / s2;
                choices.push(LabelChoice::Existing(c + 1));
                log_w.push(log_nonnull + (size as f64).ln() - log_urn + loglik);
            }
            choices.push(fresh);
            log_w.push(log_nonnull + state.alpha.ln() - log_urn + marginal.log_marginal);
        } else {
            choices.push(fresh);
            log_w.push(log_nonnull + marginal.log_marginal);
        }
    }

    /// Resample `S_k` (and a fresh cluster value if one is opened).
    pub fn update_label<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<()> {
        let mut choices = std::mem::take(&mut self.ws.choice_buffer);
        let mut log_w = std::mem::take(&mut self.ws.log_prob_buffer);
        self.fill_label_weights(k, &mut choices, &mut log_w);
        for w in log_w.iter_mut() {
            if w.is_nan() {
                *w = f64::NEG_INFINITY;
            }
        }
        let picked = sample_log_categorical(&log_w, rng);
        let choice = picked.map(|i| choices[i]);
        self.ws.choice_buffer = choices;
        self.ws.log_prob_buffer = log_w;
        let Some(choice) = choice else {
            log::warn!("label {k}: no finite weights, keeping current label");
            return Ok(());
        };

        let old_theta = self.state.theta[k];
        let old_label = self.state.labels[k - 1];
        let mut removed = None;
        if old_label > 0 && self.state.labels.iter().filter(|&&s| s == old_label).count() == 1 {
            removed = Some(old_label);
        }
        let shift = |c: usize| match removed {
            Some(r) if c > r => c - 1,
            _ => c,
        };

        let (new_label, new_theta) = match choice {
            LabelChoice::Null => (0, 0.0),
            LabelChoice::Existing(c) => (c, self.state.eta[c - 1]),
            LabelChoice::New { mean, variance } => {
                let spec = TruncatedNormal::positive(mean, variance.sqrt())
                    .map_err(|e| BnmrError::Numerical(format!("fresh cluster value: {e}")))?;
                let value = spec.sample(rng);
                self.state.eta.push(value);
                (self.state.eta.len(), value)
            }
        };
        self.state.labels[k - 1] = new_label;
        if let Some(r) = removed {
            self.state.eta.remove(r - 1);
            for s in self.state.labels.iter_mut() {
                *s = shift(*s);
            }
        }
        self.state.theta[k] = new_theta;
        let delta = new_theta - old_theta;
        if delta != 0.0 {
            axpy(-delta, column(&self.basis, k), &mut self.ws.residual);
        }
        Ok(())
    }

    /// Draw `(θ_0, η_1, …, η_K)` from its truncated normal full conditional.
    pub fn update_eta_block<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let cfg = &self.config;
        let k_clusters = self.state.eta.len();
        let dim = k_clusters + 1;
        let group: Vec<Option<usize>> = std::iter::once(Some(0))
            .chain(self.state.labels.iter().map(|&s| (s > 0).then_some(s)))
            .collect();

        let inv_s2 = 1.0 / self.state.sigma2;
        let mut precision = DMatrix::zeros(dim, dim);
        let mut linear = DVector::zeros(dim);
        for (k, gk) in group.iter().enumerate() {
            let Some(a) = *gk else { continue };
            linear[a] += inv_s2 * self.ws.lambda_t_y[k];
            for (l, gl) in group.iter().enumerate() {
                if let Some(b) = *gl {
                    precision[(a, b)] += inv_s2 * self.ws.gram[(k, l)];
                }
            }
        }
        let intercept_prec = 1.0 / (cfg.intercept_sd * cfg.intercept_sd);
        let base_prec = 1.0 / (cfg.base_sd * cfg.base_sd);
        precision[(0, 0)] += intercept_prec;
        for c in 1..dim {
            precision[(c, c)] += base_prec;
            linear[c] += base_prec * cfg.base_mean;
        }
        if Cholesky::new(precision.clone()).is_none() {
            return Err(BnmrError::NotPositiveDefinite);
        }

        let mut block = DVector::from_iterator(
            dim,
            std::iter::once(self.state.theta[0]).chain(self.state.eta.iter().copied()),
        );
        let mut lower = vec![0.0; dim];
        lower[0] = f64::NEG_INFINITY;
        truncated_mvn_sweeps(&linear, &precision, &lower, &mut block, cfg.eta_sweeps, rng)?;

        self.state.eta = block.iter().skip(1).copied().collect();
        let fresh = self.state.reconstruct_theta_with(block[0]);
        let old = std::mem::replace(&mut self.state.theta, fresh);
        for (k, (&new, &prev)) in self.state.theta.iter().zip(&old).enumerate() {
            let delta = new - prev;
            if delta != 0.0 {
                axpy(-delta, column(&self.basis, k), &mut self.ws.residual);
            }
        }
        Ok(())
    }

    /// `σ⁻² ~ Gamma(a + n/2, b + ‖y - Λθ‖²/2)`.
    pub fn update_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let shape = self.config.sigma_shape + 0.5 * self.y.len() as f64;
        let rate = self.config.sigma_rate + 0.5 * self.sum_sq_residual();
        let precision = sample_gamma(shape, rate, rng)?;
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(BnmrError::Numerical(format!(
                "residual precision draw {precision}"
            )));
        }
        self.state.sigma2 = 1.0 / precision;
        Ok(())
    }

    /// Escobar–West update of the DP concentration.
    pub fn update_alpha<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if !self.config.clustering {
            return Ok(());
        }
        self.state.alpha = draw_alpha(
            self.state.alpha,
            self.state.n_clusters(),
            self.config.order - self.state.n_null(),
            self.config.alpha_shape,
            self.config.alpha_rate,
            rng,
        )?;
        Ok(())
    }

    /// One full iteration: every label, the value block, `σ²`, then `α`.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        match self.config.label_scan {
            LabelScan::Ascending => {
                for k in 1..=self.config.order {
                    self.update_label(k, rng)?;
                }
            }
            LabelScan::Random => {
                let mut ks: Vec<usize> = (1..=self.config.order).collect();
                ks.shuffle(rng);
                for k in ks {
                    self.update_label(k, rng)?;
                }
            }
        }
        self.update_eta_block(rng)?;
        self.update_sigma2(rng)?;
        self.update_alpha(rng)?;
        self.iteration += 1;
        if self.iteration.is_multiple_of(self.config.resync_every) {
            self.resync_residual();
        }
        Ok(())
    }

    /// Run the configured number of iterations and keep the thinned draws.
    pub fn run<R: Rng + ?Sized>(&mut self, scaling: ScalingInfo, rng: &mut R) -> Result<PosteriorSample> {
        let cfg = self.config.clone();
        let order = cfg.order;
        let n_kept = cfg.n_kept();
        let mut theta_rows = Vec::with_capacity(n_kept * (order + 1));
        let mut sample = PosteriorSample::empty(order, cfg.clone(), scaling);
        for it in 0..cfg.n_iter {
            self.sweep(rng)?;
            if it >= cfg.n_burn && (it - cfg.n_burn).is_multiple_of(cfg.thin) {
                let st = &self.state;
                theta_rows.extend_from_slice(&st.theta);
                sample.draws_sigma2.push(st.sigma2);
                sample.draws_alpha.push(st.alpha);
                sample.draws_n0.push(st.n_null());
                sample.draws_k.push(st.n_clusters());
                sample.draws_labels.push(st.labels.clone());
                sample.draws_loglik.push(self.log_likelihood());
            }
        }
        let kept = sample.draws_sigma2.len();
        sample.draws_theta = DMatrix::from_row_slice(kept, order + 1, &theta_rows);
        if sample.draws_theta.iter().any(|v| !v.is_finite())
            || sample.draws_loglik.iter().any(|v| !v.is_finite())
        {
            return Err(BnmrError::Numerical("non-finite value in retained draws".into()));
        }
        Ok(sample)
    }
}

impl ChainState {
    fn reconstruct_theta_with(&self, intercept: f64) -> Vec<f64> {
        let mut theta = self.reconstruct_theta();
        theta[0] = intercept;
        theta
    }
}

/// One Escobar–West draw of `α` given `K` clusters among `m` items.
pub fn draw_alpha<R: Rng + ?Sized>(
    alpha: f64,
    n_clusters: usize,
    n_items: usize,
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Result<f64> {
    if n_items == 0 || n_clusters == 0 {
        return sample_gamma(shape, rate, rng);
    }
    let aux = Beta::new(alpha + 1.0, n_items as f64)
        .map_err(|e| BnmrError::Numerical(format!("alpha auxiliary: {e}")))?
        .sample(rng)
        .max(f64::MIN_POSITIVE);
    let post_rate = rate - aux.ln();
    let k = n_clusters as f64;
    let lower_shape = shape + k - 1.0;
    let odds = lower_shape / (n_items as f64 * post_rate);
    let use_upper = lower_shape <= 0.0 || rng.random::<f64>() < odds / (1.0 + odds);
    let new_shape = if use_upper { shape + k } else { lower_shape };
    let drawn = sample_gamma(new_shape, post_rate, rng)?;
    Ok(drawn.max(f64::MIN_POSITIVE))
}

/// Fit one chain to a standardized dataset.
pub fn run_chain<R: Rng + ?Sized>(
    config: &ModelConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<PosteriorSample> {
    let mut sampler = Sampler::for_dataset(config.clone(), data)?;
    sampler.run(data.scaling, rng)
}

/// Fit one chain to arbitrary standardized `(x, y)`, reporting with `scaling`.
///
/// Used where the response has been standardized against a larger dataset,
/// as in cross-validation folds.
pub fn run_chain_xy<R: Rng + ?Sized>(
    config: &ModelConfig,
    x: &[f64],
    y: &[f64],
    scaling: ScalingInfo,
    rng: &mut R,
) -> Result<PosteriorSample> {
    let y_mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let start = ChainState::null(config.order, y_mean);
    let mut sampler = Sampler::new(config.clone(), x, y, start)?;
    sampler.run(scaling, rng)
}
