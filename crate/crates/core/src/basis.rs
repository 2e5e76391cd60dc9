//! Bernstein polynomial bases and the increment reparameterization.
//!
//! A regression function of order `M` is written as
//!
//! ```text
//! f(x) = Σ_k ψ_k(x, M) β_k,        ψ_k(x, M) = C(M, k) x^k (1 - x)^(M - k)
//! ```
//!
//! and the coefficients are re-expressed as increments `θ_0 = β_0`,
//! `θ_k = β_k - β_{k-1}`. In increment form `f = Ψ A⁻¹ θ`, which is
//! nondecreasing whenever `θ_k ≥ 0` for every `k ≥ 1`. The matrix `Ψ A⁻¹`
//! (called `lambda` here) has column `j` equal to `Σ_{k ≥ j} ψ_k`.

use nalgebra::DMatrix;

use crate::error::{BnmrError, Result};

/// `ln C(order, k)` for `k = 0..=order`, accumulated term by term.
fn log_binomials(order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    let mut acc = 0.0;
    out.push(acc);
    for k in 1..=order {
        acc += ((order - k + 1) as f64).ln() - (k as f64).ln();
        out.push(acc);
    }
    out
}

fn check_x(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(BnmrError::Domain(format!("x = {x} is outside [0, 1]")))
    }
}

fn fill_row(x: f64, order: usize, log_binom: &[f64], row: &mut [f64]) {
    row.iter_mut().for_each(|v| *v = 0.0);
    if x == 0.0 {
        row[0] = 1.0;
        return;
    }
    if x == 1.0 {
        row[order] = 1.0;
        return;
    }
    let ln_x = x.ln();
    let ln_1mx = (-x).ln_1p();
    for (k, v) in row.iter_mut().enumerate() {
        let ln_psi = log_binom[k] + k as f64 * ln_x + (order - k) as f64 * ln_1mx;
        *v = ln_psi.exp();
    }
}

/// Values `(ψ_0(x, M), …, ψ_M(x, M))` of the Bernstein basis at one point.
pub fn bernstein_row(x: f64, order: usize) -> Result<Vec<f64>> {
    if order < 1 {
        return Err(BnmrError::Domain("basis order must be at least 1".into()));
    }
    check_x(x)?;
    let mut row = vec![0.0; order + 1];
    fill_row(x, order, &log_binomials(order), &mut row);
    Ok(row)
}

/// The increment transform `A` and its inverse, in exact integer form.
///
/// Only used where the explicit matrices are wanted; the hot paths apply
/// `A⁻¹` as a cumulative sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncrementTransform {
    pub a_matrix: DMatrix<i64>,
    pub a_inverse: DMatrix<i64>,
}

impl IncrementTransform {
    pub fn new(order: usize) -> Self {
        let dim = order + 1;
        let a_matrix = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                1
            } else if i == j + 1 {
                -1
            } else {
                0
            }
        });
        let a_inverse = DMatrix::from_fn(dim, dim, |i, j| i64::from(i >= j));
        Self { a_matrix, a_inverse }
    }

    /// `θ = A β`.
    pub fn increments(beta: &[f64]) -> Vec<f64> {
        let mut prev = 0.0;
        beta.iter()
            .map(|&b| {
                let d = b - prev;
                prev = b;
                d
            })
            .collect()
    }

    /// `β = A⁻¹ θ`, a running sum.
    pub fn coefficients(theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .scan(0.0, |acc, &t| {
                *acc += t;
                Some(*acc)
            })
            .collect()
    }
}

/// Bernstein design matrices for a fixed order and a fixed grid in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub order: usize,
    pub x_grid: Vec<f64>,
    /// `n × (M+1)`, entry `(i, k) = ψ_k(x_i, M)`.
    pub psi: DMatrix<f64>,
    /// `n × (M+1)`, `Ψ A⁻¹`.
    pub lambda: DMatrix<f64>,
    /// `n × M`, entry `(i, k) = M ψ_k(x_i, M - 1)`.
    pub dpsi: DMatrix<f64>,
}

impl BasisSet {
    pub fn new(x_grid: &[f64], order: usize) -> Result<Self> {
        if order < 1 {
            return Err(BnmrError::Domain("basis order must be at least 1".into()));
        }
        for &x in x_grid {
            check_x(x)?;
        }
        let n = x_grid.len();
        let log_binom = log_binomials(order);
        let log_binom_lower = log_binomials(order - 1);
        let mut psi = DMatrix::zeros(n, order + 1);
        let mut lambda = DMatrix::zeros(n, order + 1);
        let mut dpsi = DMatrix::zeros(n, order);

        let mut row = vec![0.0; order + 1];
        let mut row_lower = vec![0.0; order];
        for (i, &x) in x_grid.iter().enumerate() {
            fill_row(x, order, &log_binom, &mut row);
            let mut tail = 0.0;
            for k in (0..=order).rev() {
                psi[(i, k)] = row[k];
                tail += row[k];
                lambda[(i, k)] = tail;
            }
            fill_row(x, order - 1, &log_binom_lower, &mut row_lower);
            for (k, &v) in row_lower.iter().enumerate() {
                dpsi[(i, k)] = order as f64 * v;
            }
        }
        // Partition of unity makes column 0 exactly one; do not let rounding say otherwise.
        lambda.column_mut(0).fill(1.0);

        Ok(Self {
            order,
            x_grid: x_grid.to_vec(),
            psi,
            lambda,
            dpsi,
        })
    }

    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.order + 1 {
            return Err(BnmrError::DimensionMismatch {
                expected: self.order + 1,
                actual: theta.len(),
            });
        }
        Ok(())
    }

    /// `f = Λ θ` on the grid.
    pub fn evaluate_f(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let n = self.len();
        let mut out = vec![0.0; n];
        for (k, &t) in theta.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let col = self.lambda.column(k);
            out.iter_mut().zip(col.iter()).for_each(|(o, &l)| *o += l * t);
        }
        Ok(out)
    }

    /// `f' = M Ψ(x, M-1) θ_{1..M}` on the grid. The intercept does not enter.
    pub fn evaluate_derivative(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let n = self.len();
        let mut out = vec![0.0; n];
        for (k, &t) in theta.iter().skip(1).enumerate() {
            if t == 0.0 {
                continue;
            }
            let col = self.dpsi.column(k);
            out.iter_mut().zip(col.iter()).for_each(|(o, &d)| *o += d * t);
        }
        Ok(out)
    }
}

/// `n` evenly spaced points covering `[0, 1]`, endpoints included.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
