//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the crate's numerics: the Bernstein basis is
//! built from explicit binomial products and integrals use adaptive
//! Gauss–Kronrod quadrature.

#![allow(dead_code)]

pub mod checks;

/// Binomial coefficient as a float product.
pub fn binom(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `C(M,k) x^k (1-x)^(M-k)` by direct powers.
pub fn bernstein(x: f64, order: usize, k: usize) -> f64 {
    binom(order, k) * x.powi(k as i32) * (1.0 - x).powi((order - k) as i32)
}

/// Column `j` of the transformed design at `x`: `Σ_{k ≥ j} ψ_k(x)`.
pub fn lambda(x: f64, order: usize, j: usize) -> f64 {
    if j == 0 {
        return 1.0;
    }
    (j..=order).map(|k| bernstein(x, order, k)).sum()
}

/// `f(x) = Σ_j Λ_j(x) θ_j`.
pub fn curve(x: f64, theta: &[f64]) -> f64 {
    let order = theta.len() - 1;
    (0..=order).map(|j| lambda(x, order, j) * theta[j]).sum()
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel with its embedded 7-point Gauss estimate.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let fx = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        kron += WGK[i] * fx;
        if i % 2 == 1 {
            gauss += WG[i / 2] * fx;
        }
    }
    (kron * h, (kron - gauss).abs() * h)
}

/// Adaptive Gauss–Kronrod quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gk15(f, a, b);
        // Below ~1e-14 relative the error estimate is roundoff.
        if !err.is_finite() || err <= tol.max(1e-14 * value.abs()) || depth >= 30 {
            return value;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth + 1) + recurse(f, m, b, 0.5 * tol, depth + 1)
    }
    recurse(&f, a, b, tol, 0)
}

/// Quadrature over `panels` equal sub-intervals, so that narrow peaks
/// inside a long range are not missed by the first coarse panel.
pub fn integrate_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| integrate(&f, a + i as f64 * h, a + (i + 1) as f64 * h, tol / panels as f64))
        .sum()
}

/// `Φ(z)` via a quadrature of the density, for moderate `z`.
pub fn normal_cdf(z: f64) -> f64 {
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if z < 0.0 {
        integrate(pdf, z - 40.0, z, 1e-17)
    } else {
        1.0 - integrate(pdf, -z - 40.0, -z, 1e-17)
    }
}

/// Kolmogorov–Smirnov statistic of `samples` against the CDF obtained by
/// integrating the unnormalized density `g` over `[lower, upper]`.
///
/// The CDF is accumulated panel by panel between consecutive sorted samples.
pub fn ks_statistic_quadrature(mut samples: Vec<f64>, g: impl Fn(f64) -> f64, lower: f64, upper: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let total = integrate_panels(&g, lower, upper, 400, 1e-13);
    let n = samples.len() as f64;
    let mut cum = 0.0;
    let mut prev = lower;
    let mut d: f64 = 0.0;
    for (i, &s) in samples.iter().enumerate() {
        cum += integrate(&g, prev, s, 1e-14);
        prev = s;
        let cdf = cum / total;
        d = d
            .max((cdf - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - cdf).abs());
    }
    d
}

/// Two-sided KS critical value for `√n · D` at level `alpha` (asymptotic).
pub fn ks_critical(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}
