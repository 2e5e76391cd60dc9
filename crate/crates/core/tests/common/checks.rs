//! Oracle computations reused by the focused tests and the acceptance suite.
//! Each returns raw discrepancies; callers decide the tolerance.

use bnmr::gibbs::{new_cluster_log_marginal, Sampler};
use bnmr::model::{ChainState, ModelConfig};
use bnmr::samplers::TruncatedNormal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};

use super::*;

pub fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn gaussian_loglik(y: &[f64], fitted: &[f64], sigma2: f64) -> f64 {
    y.iter()
        .zip(fitted)
        .map(|(&yi, &fi)| -0.5 * (LN_2PI + sigma2.ln()) - 0.5 * (yi - fi) * (yi - fi) / sigma2)
        .sum()
}

pub fn fitted(x: &[f64], theta: &[f64]) -> Vec<f64> {
    x.iter().map(|&xi| curve(xi, theta)).collect()
}

/// `ln ∫₀^∞ exp(ℓ(t) - ℓ(0)) TN(t; μ, φ²) dt`, with `ℓ(t)` the log-likelihood
/// when increment `k` takes value `t`.
pub fn oracle_log_marginal(
    x: &[f64],
    y: &[f64],
    theta: &[f64],
    k: usize,
    sigma2: f64,
    mu: f64,
    phi: f64,
) -> f64 {
    let mut base = theta.to_vec();
    base[k] = 0.0;
    let l0 = gaussian_loglik(y, &fitted(x, &base), sigma2);
    let order = theta.len() - 1;
    let col: Vec<f64> = x.iter().map(|&xi| lambda(xi, order, k)).collect();
    let rest = fitted(x, &base);
    let log_tn_norm = normal_cdf(mu / phi).ln();
    let log_h = |t: f64| {
        let shifted: Vec<f64> = rest.iter().zip(&col).map(|(r, c)| r + c * t).collect();
        gaussian_loglik(y, &shifted, sigma2)
            - l0
            - 0.5 * LN_2PI
            - phi.ln()
            - 0.5 * ((t - mu) / phi).powi(2)
            - log_tn_norm
    };
    let upper = 60.0;
    let peak = (0..=6000)
        .map(|i| log_h(upper * i as f64 / 6000.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let integral = integrate_panels(|t| (log_h(t) - peak).exp(), 0.0, upper, 600, 1e-15);
    peak + integral.ln()
}

/// `(closed form, quadrature)` log marginals over 20 random configurations
/// with `n = 15`, `M = 6`.
pub fn marginal_pairs() -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (n, order) = (15, 6);
    (0..20)
        .map(|_| {
            let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            x.sort_by(f64::total_cmp);
            let mut theta: Vec<f64> = (0..=order)
                .map(|j| {
                    if j == 0 {
                        rng.random_range(-1.0..1.0)
                    } else if rng.random::<f64>() < 0.4 {
                        0.0
                    } else {
                        rng.random_range(0.0..0.8)
                    }
                })
                .collect();
            let sigma2: f64 = rng.random_range(0.05..2.0);
            let mu = rng.random_range(-0.5..1.0);
            let phi = rng.random_range(0.1..1.0);
            let k = rng.random_range(1..=order);
            let y: Vec<f64> = x
                .iter()
                .map(|&xi| curve(xi, &theta) + sigma2.sqrt() * gauss(&mut rng))
                .collect();
            theta[k] = rng.random_range(0.0..0.5);

            let mut rest = theta.clone();
            rest[k] = 0.0;
            let resid: Vec<f64> = y.iter().zip(fitted(&x, &rest)).map(|(a, b)| a - b).collect();
            let col: Vec<f64> = x.iter().map(|&xi| lambda(xi, order, k)).collect();
            let cross: f64 = col.iter().zip(&resid).map(|(c, r)| c * r).sum();
            let norm_sq: f64 = col.iter().map(|c| c * c).sum();

            let got = new_cluster_log_marginal(cross, norm_sq, sigma2, mu, phi).log_marginal;
            (got, oracle_log_marginal(&x, &y, &theta, k, sigma2, mu, phi))
        })
        .collect()
}

/// Truncated normals from mild to extreme truncation.
pub fn ks_regimes() -> Vec<TruncatedNormal> {
    let inf = f64::INFINITY;
    [
        (0.0, 1.0, 0.0, inf),
        (0.5, 0.25, 0.0, inf),
        (-3.0, 1.0, 0.0, inf),
        (0.0, 1.0, 6.0, inf),
        (-20.0, 0.5, 0.0, inf),
        (0.0, 1.0, -inf, -5.0),
        (0.0, 1.0, -1.0, 2.0),
        (5.0, 1.0, 0.1, 0.3),
        (0.0, 2.0, 7.0, 7.5),
        (1.0, 1e-3, 0.0, inf),
    ]
    .into_iter()
    .map(|(m, s, a, b)| TruncatedNormal::new(m, s, a, b).unwrap())
    .collect()
}

/// `√n · D` for `n` draws of `spec`; `None` if a draw leaves the support.
pub fn ks_scaled_statistic(spec: TruncatedNormal, n: usize, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..n).map(|_| spec.sample(&mut rng)).collect();
    if !draws.iter().all(|&d| d > spec.lower && d < spec.upper) {
        return None;
    }
    let anchor = spec.mean.clamp(spec.lower, spec.upper);
    let lo = spec.lower.max(anchor - 40.0 * spec.sd);
    let hi = spec.upper.min(anchor + 40.0 * spec.sd);
    let g = |t: f64| {
        let z = (t - spec.mean) / spec.sd;
        let za = (anchor - spec.mean) / spec.sd;
        (-0.5 * (z * z - za * za)).exp()
    };
    Some((n as f64).sqrt() * ks_statistic_quadrature(draws, g, lo, hi))
}

pub const GEWEKE_N: usize = 12;
pub const GEWEKE_ORDER: usize = 4;
pub const GEWEKE_STATS: [&str; 7] = [
    "theta1",
    "theta1^2",
    "P(theta1 = 0)",
    "n0",
    "theta0",
    "thetaM",
    "K",
];

pub fn geweke_config() -> ModelConfig {
    ModelConfig {
        order: GEWEKE_ORDER,
        sigma_shape: 3.0,
        sigma_rate: 1.0,
        intercept_sd: 1.0,
        ..ModelConfig::default()
    }
}

fn positive_normal<R: Rng>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let d = Normal::new(mean, sd).unwrap();
    loop {
        let v = d.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Exact prior draw: spike-and-slab labels through a Chinese restaurant process.
pub fn prior_state<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> ChainState {
    let precision = Gamma::new(cfg.sigma_shape, 1.0 / cfg.sigma_rate)
        .unwrap()
        .sample(rng);
    let alpha = Gamma::new(cfg.alpha_shape, 1.0 / cfg.alpha_rate)
        .unwrap()
        .sample(rng);
    let pi = Beta::new(cfg.pi_a, cfg.pi_b).unwrap().sample(rng);
    let intercept = cfg.intercept_sd * gauss(rng);
    let mut labels = Vec::with_capacity(cfg.order);
    let mut eta: Vec<f64> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for _ in 0..cfg.order {
        if rng.random::<f64>() < pi {
            labels.push(0);
            continue;
        }
        let seated: usize = sizes.iter().sum();
        let mut u = rng.random::<f64>() * (seated as f64 + alpha);
        let mut table = None;
        for (c, &s) in sizes.iter().enumerate() {
            u -= s as f64;
            if u < 0.0 {
                table = Some(c);
                break;
            }
        }
        let c = table.unwrap_or_else(|| {
            sizes.push(0);
            eta.push(positive_normal(cfg.base_mean, cfg.base_sd, rng));
            sizes.len() - 1
        });
        sizes[c] += 1;
        labels.push(c + 1);
    }
    let theta = std::iter::once(intercept)
        .chain(labels.iter().map(|&s| if s == 0 { 0.0 } else { eta[s - 1] }))
        .collect();
    ChainState {
        theta,
        labels,
        eta,
        sigma2: 1.0 / precision,
        alpha,
    }
}

fn simulate_y<R: Rng>(x: &[f64], state: &ChainState, rng: &mut R) -> Vec<f64> {
    let sd = state.sigma2.sqrt();
    x.iter()
        .map(|&xi| curve(xi, &state.theta) + sd * gauss(rng))
        .collect()
}

fn geweke_stats(state: &ChainState) -> [f64; 7] {
    let t1 = state.theta[1];
    [
        t1,
        t1 * t1,
        (t1 == 0.0) as u8 as f64,
        state.n_null() as f64,
        state.theta[0],
        state.theta[GEWEKE_ORDER],
        state.n_clusters() as f64,
    ]
}

fn batch_means_var(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&v[b * size..(b + 1) * size])).collect();
    variance(&means) / batches as f64
}

/// Marginal-conditional versus successive-conditional simulation: one
/// `(prior mean, chain mean, z)` triple per entry of [`GEWEKE_STATS`].
pub fn geweke_z_scores(draws: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let cfg = geweke_config();
    let x: Vec<f64> = (0..GEWEKE_N)
        .map(|i| (i as f64 + 0.5) / GEWEKE_N as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = GEWEKE_STATS.len();

    let mut forward: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); k];
    for _ in 0..draws {
        let s = prior_state(&cfg, &mut rng);
        for (j, v) in geweke_stats(&s).into_iter().enumerate() {
            forward[j].push(v);
        }
    }

    let start = prior_state(&cfg, &mut rng);
    let y = simulate_y(&x, &start, &mut rng);
    let mut sampler = Sampler::new(cfg.clone(), &x, &y, start).unwrap();
    let mut chain: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); k];
    for _ in 0..draws {
        sampler.sweep(&mut rng).unwrap();
        let y = simulate_y(&x, sampler.state(), &mut rng);
        sampler.set_response(y).unwrap();
        for (j, v) in geweke_stats(sampler.state()).into_iter().enumerate() {
            chain[j].push(v);
        }
    }
    sampler.state().check_invariants().unwrap();

    (0..k)
        .map(|j| {
            let se = (variance(&forward[j]) / draws as f64 + batch_means_var(&chain[j], 200)).sqrt();
            let (a, b) = (mean(&forward[j]), mean(&chain[j]));
            (a, b, (a - b) / se)
        })
        .collect()
}
