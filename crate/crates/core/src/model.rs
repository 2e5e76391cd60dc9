//! Hyperparameters and the state of one Markov chain.
//!
//! The hierarchy being sampled is
//!
//! ```text
//! y_i | θ, σ²     ~ N(Λ_i θ, σ²)
//! θ_0             ~ N(0, φ₀²)
//! θ_k | P, π      ~ π δ₀ + (1 - π) P          k = 1..M
//! P               ~ DP(α, TN_[0,∞)(μ, φ²))
//! π ~ Beta(a_π, b_π),   σ⁻² ~ Gamma(a, b),   α ~ Gamma(a_α, b_α)
//! ```
//!
//! The defaults for `a`, `b`, `φ₀` and the hyperprior on `α` are choices of
//! this crate: the response is standardized before fitting, so a weakly
//! informative intercept prior (`φ₀ = 10`) and vague gamma priors are used.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{BnmrError, Result};

/// Order in which the coefficient labels are visited within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelScan {
    #[default]
    Ascending,
    Random,
}

impl std::str::FromStr for LabelScan {
    type Err = BnmrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascending" => Ok(Self::Ascending),
            "random" => Ok(Self::Random),
            other => Err(BnmrError::Config(format!(
                "label_scan must be 'ascending' or 'random', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Bernstein order `M`.
    pub order: usize,
    /// Mean `μ` of the truncated-normal base measure.
    pub base_mean: f64,
    /// Scale `φ` of the truncated-normal base measure.
    pub base_sd: f64,
    /// Prior standard deviation `φ₀` of the intercept.
    pub intercept_sd: f64,
    /// Gamma shape `a` on the residual precision.
    pub sigma_shape: f64,
    /// Gamma rate `b` on the residual precision.
    pub sigma_rate: f64,
    /// Beta prior on the probability of a zero increment.
    pub pi_a: f64,
    pub pi_b: f64,
    /// Gamma hyperprior (shape, rate) on the DP concentration.
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Coordinate sweeps through the cluster-value block per iteration.
    pub eta_sweeps: usize,
    pub label_scan: LabelScan,
    /// When false every non-zero increment keeps its own value (selection only).
    pub clustering: bool,
    /// Start from a single cluster spanning the data range instead of the null model.
    pub warm_start: bool,
    /// Recompute the residual from scratch every this many iterations.
    pub resync_every: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            order: 50,
            base_mean: 0.5,
            base_sd: 0.25,
            intercept_sd: 10.0,
            sigma_shape: 0.1,
            sigma_rate: 0.1,
            pi_a: 1.0,
            pi_b: 1.0,
            alpha_shape: 1.0,
            alpha_rate: 1.0,
            n_iter: 50_000,
            n_burn: 25_000,
            thin: 10,
            seed: 0,
            eta_sweeps: 1,
            label_scan: LabelScan::Ascending,
            clustering: true,
            warm_start: false,
            resync_every: 1000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_sd", self.base_sd),
            ("intercept_sd", self.intercept_sd),
            ("sigma_shape", self.sigma_shape),
            ("sigma_rate", self.sigma_rate),
            ("pi_a", self.pi_a),
            ("pi_b", self.pi_b),
            ("alpha_shape", self.alpha_shape),
            ("alpha_rate", self.alpha_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BnmrError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.base_mean.is_finite() {
            return Err(BnmrError::Config("base_mean must be finite".into()));
        }
        if self.order < 1 {
            return Err(BnmrError::Config("order must be at least 1".into()));
        }
        if self.n_iter <= self.n_burn {
            return Err(BnmrError::Config(format!(
                "n_iter ({}) must exceed n_burn ({})",
                self.n_iter, self.n_burn
            )));
        }
        if self.thin < 1 || self.eta_sweeps < 1 || self.resync_every < 1 {
            return Err(BnmrError::Config(
                "thin, eta_sweeps and resync_every must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of draws `run_chain` will retain.
    pub fn n_kept(&self) -> usize {
        (self.n_iter - self.n_burn).div_ceil(self.thin)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BnmrError::Config(e.message().into()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BnmrError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| BnmrError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

/// Current values of every unknown in one chain.
///
/// `labels[k - 1]` holds `S_k` for `k = 1..=M`; `S_k = 0` marks the null
/// cluster and `S_k = c > 0` points at `eta[c - 1]`. Cluster ids are kept
/// compact, `1..=eta.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub labels: Vec<usize>,
    pub eta: Vec<f64>,
    pub sigma2: f64,
    pub alpha: f64,
}

impl ChainState {
    /// Every increment in the null cluster, intercept at `intercept`.
    pub fn null(order: usize, intercept: f64) -> Self {
        let mut theta = vec![0.0; order + 1];
        theta[0] = intercept;
        Self {
            theta,
            labels: vec![0; order],
            eta: Vec::new(),
            sigma2: 1.0,
            alpha: 1.0,
        }
    }

    pub fn order(&self) -> usize {
        self.labels.len()
    }

    /// `K`, the number of distinct non-zero increment values.
    pub fn n_clusters(&self) -> usize {
        self.eta.len()
    }

    /// `n₀`, the number of increments in the null cluster.
    pub fn n_null(&self) -> usize {
        self.labels.iter().filter(|&&s| s == 0).count()
    }

    /// Member counts per non-zero cluster, indexed by `id - 1`.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.eta.len()];
        for &s in &self.labels {
            if s > 0 {
                sizes[s - 1] += 1;
            }
        }
        sizes
    }

    /// `θ_k` implied by the labels and cluster values.
    pub fn increment(&self, k: usize) -> f64 {
        match self.labels[k - 1] {
            0 => 0.0,
            c => self.eta[c - 1],
        }
    }

    /// Rebuild `θ` from `(θ_0, labels, eta)`.
    pub fn reconstruct_theta(&self) -> Vec<f64> {
        std::iter::once(self.theta[0])
            .chain((1..=self.order()).map(|k| self.increment(k)))
            .collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(BnmrError::Numerical(format!("chain state: {msg}")));
        if self.theta.len() != self.labels.len() + 1 {
            return fail("theta and labels lengths disagree".into());
        }
        if self.theta != self.reconstruct_theta() {
            return fail("theta is not reproduced by labels and eta".into());
        }
        if let Some(c) = self.eta.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
            return fail(format!(
                "cluster {} has non-positive value {}",
                c + 1,
                self.eta[c]
            ));
        }
        if let Some(c) = self.cluster_sizes().iter().position(|&n| n == 0) {
            return fail(format!("cluster {} is empty", c + 1));
        }
        if self.labels.iter().any(|&s| s > self.eta.len()) {
            return fail("label refers to a missing cluster".into());
        }
        if !(self.sigma2 > 0.0 && self.alpha > 0.0) {
            return fail(format!("sigma2 = {}, alpha = {}", self.sigma2, self.alpha));
        }
        Ok(())
    }
}

/// Starting state for a chain.
///
/// By default every increment starts in the null cluster with the intercept
/// at the response mean. With `warm_start` a single cluster covers all
/// increments so that the starting curve is the straight line from the
/// minimum to the maximum response.
pub fn initial_state(config: &ModelConfig, data: &Dataset) -> ChainState {
    let order = config.order;
    let y_mean = if data.y.is_empty() {
        0.0
    } else {
        data.y.iter().sum::<f64>() / data.y.len() as f64
    };
    if config.warm_start && !data.y.is_empty() {
        let y_min = data.y.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = data.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let step = ((y_max - y_min) / order as f64).max(0.01);
        let mut theta = vec![step; order + 1];
        theta[0] = y_min;
        ChainState {
            theta,
            labels: vec![1; order],
            eta: vec![step],
            sigma2: 1.0,
            alpha: 1.0,
        }
    } else {
        ChainState::null(order, y_mean)
    }
}
