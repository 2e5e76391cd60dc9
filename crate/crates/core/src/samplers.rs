//! Random variates used by the Gibbs engine: truncated univariate and
//! multivariate normals, plus gamma draws.
//!
//! The univariate truncated normal uses a hybrid scheme. Mild truncation is
//! handled by inverting the normal CDF on the retained interval, working in
//! the upper-tail complement whenever the interval sits above the mean so
//! that no precision is lost to `1 - Φ`. When the bound lies far in a tail
//! (more than [`TAIL_THRESHOLD`] standard deviations) the inverse CDF
//! becomes unreliable and an exponential-proposal rejection sampler is used
//! instead. Narrow finite windows fall back to uniform rejection.

use libm::erfc;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::erf::erfc_inv;

use crate::error::{BnmrError, Result};

/// Standardized distance from the mean beyond which tail rejection is used.
pub const TAIL_THRESHOLD: f64 = 4.0;

const NARROW_WINDOW: f64 = 0.5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln φ(z)` for the standard normal density.
pub fn log_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `Φ⁻¹(p)` for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !z.is_finite() {
        return z;
    }
    // One Newton step against the exact CDF.
    let step = (normal_cdf(z) - p) / log_normal_pdf(z).exp();
    if step.is_finite() {
        z - step
    } else {
        z
    }
}

/// `ln Φ(z)`, finite for every finite `z`.
///
/// Below `z = -37` the complementary error function underflows, so the
/// asymptotic Mills-ratio series takes over.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if z > 0.0 {
        (-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else if z > -37.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        let inv_z2 = 1.0 / (z * z);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..10 {
            term *= -((2 * n - 1) as f64) * inv_z2;
            sum += term;
        }
        log_normal_pdf(z) - (-z).ln() + sum.ln()
    }
}

/// `ln(Φ(b) - Φ(a))` for `a < b`.
pub fn log_normal_interval(a: f64, b: f64) -> f64 {
    // Reflect so the interval is in the lower half, where Φ keeps relative precision.
    let (lo, hi) = if a > 0.0 { (-b, -a) } else { (a, b) };
    let log_hi = log_normal_cdf(hi);
    let log_lo = log_normal_cdf(lo);
    if log_lo == f64::NEG_INFINITY {
        return log_hi;
    }
    log_hi + (-(log_lo - log_hi).exp_m1()).ln()
}

/// A normal distribution restricted to `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub variance: f64,
    /// `ln ∫_lower^upper N(t; mean, sd²) dt`.
    pub log_normalizer: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(BnmrError::Domain(format!("sd must be positive, got {sd}")));
        }
        if !mean.is_finite() {
            return Err(BnmrError::Domain(format!("mean must be finite, got {mean}")));
        }
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(BnmrError::Domain(format!(
                "empty truncation interval ({lower}, {upper})"
            )));
        }
        Ok(Self {
            mean,
            sd,
            lower,
            upper,
        })
    }

    /// Truncated to `[0, ∞)`.
    pub fn positive(mean: f64, sd: f64) -> Result<Self> {
        Self::new(mean, sd, 0.0, f64::INFINITY)
    }

    fn standardized(&self) -> (f64, f64) {
        (
            (self.lower - self.mean) / self.sd,
            (self.upper - self.mean) / self.sd,
        )
    }

    pub fn moments(&self) -> TruncatedMoments {
        let (a, b) = self.standardized();
        let log_z = log_normal_interval(a, b);
        let ratio = |t: f64| {
            if t.is_infinite() {
                0.0
            } else {
                (log_normal_pdf(t) - log_z).exp()
            }
        };
        let (ra, rb) = (ratio(a), ratio(b));
        let ta = if a.is_infinite() { 0.0 } else { a * ra };
        let tb = if b.is_infinite() { 0.0 } else { b * rb };
        let shift = ra - rb;
        let variance = (1.0 + ta - tb - shift * shift).max(0.0) * self.sd * self.sd;
        TruncatedMoments {
            mean: self.mean + self.sd * shift,
            variance,
            log_normalizer: log_z,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.standardized();
        let z = standard_truncated(a, b, rng);
        let mut x = self.mean + self.sd * z;
        if x <= self.lower {
            x = self.lower.next_up();
        }
        if x >= self.upper {
            x = self.upper.next_down();
        }
        debug_assert!(x > self.lower && x < self.upper);
        x
    }
}

pub fn truncated_normal_moments(spec: &TruncatedNormal) -> TruncatedMoments {
    spec.moments()
}

pub fn sample_truncated_normal<R: Rng + ?Sized>(spec: &TruncatedNormal, rng: &mut R) -> f64 {
    spec.sample(rng)
}

/// Uniform on the open interval `(0, 1)`.
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal truncated to `(a, b)`.
fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a < NARROW_WINDOW {
        return narrow_window(a, b, rng);
    }
    if a >= TAIL_THRESHOLD {
        return upper_tail(a, b, rng);
    }
    if b <= -TAIL_THRESHOLD {
        return -upper_tail(-b, -a, rng);
    }
    if a >= 0.0 {
        // Work with upper-tail probabilities Φ(-z).
        let p_lo = normal_cdf(-b);
        let p_hi = normal_cdf(-a);
        let u = p_lo + (p_hi - p_lo) * open_uniform(rng);
        (-normal_quantile(u)).clamp(a, b)
    } else {
        let p_lo = normal_cdf(a);
        let p_hi = normal_cdf(b);
        let u = p_lo + (p_hi - p_lo) * open_uniform(rng);
        normal_quantile(u).clamp(a, b)
    }
}

/// Rejection from a translated exponential proposal, for `a` far above zero.
fn upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - open_uniform(rng).ln() / rate;
        if z > b {
            continue;
        }
        let d = z - rate;
        if open_uniform(rng).ln() <= -0.5 * d * d {
            return z;
        }
    }
}

/// Uniform proposal over a short window, accepted against the normal kernel.
fn narrow_window<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let closest = if a > 0.0 {
        a
    } else if b < 0.0 {
        b
    } else {
        0.0
    };
    let peak = closest * closest;
    loop {
        let z = a + (b - a) * open_uniform(rng);
        if open_uniform(rng).ln() <= 0.5 * (peak - z * z) {
            return z;
        }
    }
}

/// Coordinate-wise Gibbs sweeps for a normal in canonical form
/// (`precision · mean = linear`) truncated below by `lower_bounds`.
///
/// `state` is updated in place; the precision is assumed positive definite.
pub(crate) fn truncated_mvn_sweeps<R: Rng + ?Sized>(
    linear: &DVector<f64>,
    precision: &DMatrix<f64>,
    lower_bounds: &[f64],
    state: &mut DVector<f64>,
    sweeps: usize,
    rng: &mut R,
) -> Result<()> {
    let dim = state.len();
    for _ in 0..sweeps {
        for j in 0..dim {
            let q_jj = precision[(j, j)];
            let mut acc = linear[j];
            for i in 0..dim {
                if i != j {
                    acc -= precision[(i, j)] * state[i];
                }
            }
            let mean = acc / q_jj;
            let sd = q_jj.sqrt().recip();
            let spec = TruncatedNormal::new(mean, sd, lower_bounds[j], f64::INFINITY)
                .map_err(|e| BnmrError::Numerical(format!("coordinate {j}: {e}")))?;
            state[j] = spec.sample(rng);
        }
    }
    Ok(())
}

/// One approximate draw from `N(mean, precision⁻¹)` truncated below by
/// `lower_bounds`, produced by `sweeps` coordinate Gibbs passes starting from
/// `start`. Use `f64::NEG_INFINITY` for unbounded coordinates.
pub fn sample_truncated_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    lower_bounds: &[f64],
    start: &DVector<f64>,
    sweeps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dim = mean.len();
    if precision.nrows() != dim || precision.ncols() != dim {
        return Err(BnmrError::DimensionMismatch {
            expected: dim,
            actual: precision.nrows(),
        });
    }
    if lower_bounds.len() != dim || start.len() != dim {
        return Err(BnmrError::DimensionMismatch {
            expected: dim,
            actual: lower_bounds.len().min(start.len()),
        });
    }
    if Cholesky::new(precision.clone()).is_none() {
        return Err(BnmrError::NotPositiveDefinite);
    }
    let linear = precision * mean;
    let mut state = start.clone();
    for (s, &lo) in state.iter_mut().zip(lower_bounds) {
        if *s <= lo {
            *s = if lo.is_finite() { lo + 1e-8 } else { 0.0 };
        }
    }
    truncated_mvn_sweeps(&linear, precision, lower_bounds, &mut state, sweeps, rng)?;
    Ok(state)
}

/// Gamma draw parameterized by shape and rate.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(BnmrError::Domain(format!(
            "gamma parameters must be positive, got shape {shape}, rate {rate}"
        )));
    }
    let dist = Gamma::new(shape, rate.recip())
        .map_err(|e| BnmrError::Domain(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empirical_mean(spec: &TruncatedNormal, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        for _ in 0..draws {
            let x = spec.sample(&mut rng);
            assert!(x > spec.lower && x < spec.upper);
            sum += x;
        }
        sum / draws as f64
    }

    #[test]
    fn untruncated_is_standard_normal() {
        let spec = TruncatedNormal::new(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!(empirical_mean(&spec, 1_000_000, 1).abs() < 4e-3);
    }

    #[test]
    fn half_normal_mean() {
        let spec = TruncatedNormal::positive(0.0, 1.0).unwrap();
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((empirical_mean(&spec, 1_000_000, 2) - expected).abs() < 4e-3);
        assert!((spec.moments().mean - expected).abs() < 1e-12);
    }

    #[test]
    fn log_normalizer_examples() {
        let half = TruncatedNormal::positive(0.0, 1.0).unwrap().moments();
        assert_relative_eq!(half.log_normalizer, 0.5f64.ln(), max_relative = 1e-14);
        let base = TruncatedNormal::positive(0.5, 0.25).unwrap().moments();
        assert_relative_eq!(
            base.log_normalizer,
            0.977_249_868_051_820_8f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn log_normalizer_is_finite_far_in_the_tail() {
        for k in 1..=40 {
            let m = TruncatedNormal::positive(-(k as f64), 1.0).unwrap().moments();
            assert!(m.log_normalizer.is_finite(), "mean -{k}");
            assert!(m.mean > 0.0 && m.variance > 0.0);
        }
        // Continuity across the switch to the asymptotic series.
        let left = log_normal_cdf(-37.0 - 1e-9);
        let right = log_normal_cdf(-37.0 + 1e-9);
        assert!((left - right).abs() < 1e-6);
    }

    #[test]
    fn interval_probability_matches_direct_difference() {
        for (a, b) in [(-1.0, 0.5), (0.2, 3.0), (-3.0, -0.1), (1.0, f64::INFINITY)] {
            let direct = normal_cdf(b) - normal_cdf(a);
            assert_relative_eq!(log_normal_interval(a, b).exp(), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn bounds_hold_in_every_regime() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = [
            TruncatedNormal::new(0.0, 1.0, 8.0, f64::INFINITY).unwrap(),
            TruncatedNormal::new(0.0, 1.0, f64::NEG_INFINITY, -9.0).unwrap(),
            TruncatedNormal::new(2.0, 0.5, 2.0, 2.0 + 1e-9).unwrap(),
            TruncatedNormal::new(-30.0, 1.0, 0.0, f64::INFINITY).unwrap(),
            TruncatedNormal::new(1.0, 3.0, -1.0, 0.0).unwrap(),
        ];
        for spec in &specs {
            for _ in 0..10_000 {
                let x = spec.sample(&mut rng);
                assert!(x > spec.lower && x < spec.upper, "{spec:?} gave {x}");
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TruncatedNormal::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(TruncatedNormal::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(TruncatedNormal::new(f64::NAN, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn gamma_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (shape, rate) in [(1.0, 1.0), (2.0, 4.0), (0.1, 0.1)] {
            let n = 400_000;
            let mean: f64 = (0..n)
                .map(|_| sample_gamma(shape, rate, &mut rng).unwrap())
                .sum::<f64>()
                / n as f64;
            let se = (shape / (rate * rate) / n as f64).sqrt();
            assert!(
                (mean - shape / rate).abs() < 5.0 * se,
                "gamma({shape},{rate}) mean {mean}"
            );
        }
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, -2.0, &mut rng).is_err());
    }

    #[test]
    fn mvn_rejects_indefinite_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let m = DVector::from_vec(vec![0.0, 0.0]);
        let err = sample_truncated_mvn(&m, &q, &[0.0, 0.0], &m, 1, &mut rng);
        assert!(matches!(err, Err(BnmrError::NotPositiveDefinite)));
    }

    #[test]
    fn one_dimensional_mvn_matches_univariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = DMatrix::from_element(1, 1, 4.0);
        let m = DVector::from_element(1, 0.3);
        let start = DVector::from_element(1, 0.0);
        let n = 400_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_truncated_mvn(&m, &q, &[f64::NEG_INFINITY], &start, 1, &mut rng).unwrap()[0];
        }
        assert!((sum / n as f64 - 0.3).abs() < 5.0 * 0.5 / (n as f64).sqrt());
    }
}
