//! Neural SDE generation with a Hermite-function critic.
//!
//! The crate bundles everything needed to fit a neural stochastic differential
//! equation to trajectory data under a Wasserstein-GAN objective:
//!
//! * [`hermite`]: Hermite functions, Gauss-Hermite quadrature, projections and
//!   the Hermite-span integral probability metric.
//! * [`sde`]: benchmark processes, Euler-Maruyama and Stratonovich-Heun
//!   solvers, and analytic Ornstein-Uhlenbeck oracles.
//! * [`nn`]: a small MLP with hand-written backpropagation and Adam.
//! * [`generator`] / [`discriminator`] / [`training`]: the adversarial model.
//! * [`metrics`]: MISE, tail difference, mean-trajectory MSE and MMD.
//! * [`dataset`]: wide-format CSV datasets, sidecars and ingestion of raw series.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod hermite;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sde;
pub mod training;

pub use error::{Error, Result};
pub use hermite::{CoefficientVector, HermiteBasis};
pub use sde::{PathBatch, ProcessKind, ProcessSpec, TimeGrid};
