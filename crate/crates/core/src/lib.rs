//! Bayesian learning for neural networks: Metropolis–Hastings and HMC,
//! black-box and natural-gradient variational inference, and variational
//! Bayes on the manifold of SPD matrices, with closed-form oracles and
//! invariant checks.
//!
//! The numerical core is generic over the scalar through [`Real`] (`f32` or
//! `f64`); the aliases below fix the common choices. The experiment harness
//! and the diagnostics that use finite differences work in `f64`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod models;
pub mod mcmc;
pub mod diagnostics;
pub mod optim;
pub mod blackbox;
pub mod natgrad;
pub mod manifold;
pub mod predictive;
pub mod instability;
pub mod harness;

pub use error::{Error, Result};
pub use gaussian::{kl_gaussians, CovRepr, GaussianVariational};
pub use linalg::Matrix;
pub use models::{Dataset, GaussianPrior, Posterior, ProbModel, Task};
pub use optim::{StepReport, VariationalOptimizer};
pub use rng::RngStream;
pub use scalar::Real;

pub type Gaussian64 = GaussianVariational<f64>;
pub type Gaussian32 = GaussianVariational<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Prior64 = GaussianPrior<f64>;
pub type Prior32 = GaussianPrior<f32>;
pub type Chain64 = mcmc::Chain<f64>;
pub type Chain32 = mcmc::Chain<f32>;
pub type Mlp64 = models::Mlp<f64>;
pub type Mlp32 = models::Mlp<f32>;
