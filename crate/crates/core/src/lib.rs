//! Bayesian nonparametric monotone regression.
//!
//! A nondecreasing curve is represented as a Bernstein polynomial whose
//! coefficient increments are either exactly zero or drawn from a Dirichlet
//! process on the positive half-line. The posterior therefore assigns mass
//! to a flat curve and to a straight line, and the increments cluster on a
//! few shared values.
//!
//! ```
//! use bnmr::data::Dataset;
//! use bnmr::gibbs::run_chain;
//! use bnmr::inference::{model_probabilities, posterior_curve};
//! use bnmr::model::ModelConfig;
//! use rand::SeedableRng;
//!
//! let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
//! let y: Vec<f64> = x.iter().map(|&t| 3.0 + 0.1 * t + 0.05 * (t * 1.7).sin()).collect();
//! let data = Dataset::from_xy(&x, &y)?;
//!
//! let config = ModelConfig { order: 20, n_iter: 1000, n_burn: 500, ..ModelConfig::default() };
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
//! let sample = run_chain(&config, &data, &mut rng)?;
//!
//! let curve = posterior_curve(&sample, &bnmr::basis::uniform_grid(25))?;
//! assert!(curve.mean.windows(2).all(|w| w[1] >= w[0] - 1e-9));
//! assert!(model_probabilities(&sample)?.flat < 0.5);
//! # Ok::<(), bnmr::BnmrError>(())
//! ```
//!
//! Module map: [`data`] reads and standardizes series, [`basis`] builds the
//! design, [`model`] holds the prior and chain state, [`gibbs`] and
//! [`samplers`] run the chain, [`inference`] summarizes draws, [`sim`] runs
//! synthetic studies and [`cli`] is the command-line front end.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod data;
pub mod error;
pub mod gibbs;
pub mod inference;
pub mod model;
pub mod samplers;
pub mod sim;

pub use error::{BnmrError, Result};

/// Code blocks of the user guide, compiled and run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/basis.md")]
    struct Basis;
    #[doc = include_str!("../../../book/src/prior.md")]
    struct Prior;
    #[doc = include_str!("../../../book/src/sampler.md")]
    struct Sampler;
    #[doc = include_str!("../../../book/src/inference.md")]
    struct Inference;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
