//! Variational Bayesian neural networks for multivariate regression, with
//! alpha-divergence training objectives, post-hoc calibration of the
//! predictive covariance, and coverage-based calibration metrics.
//!
//! Layering, bottom up:
//! - [`linalg`], [`rng`], [`special`], [`func`]: dense matrices, Cholesky and
//!   triangular solves, a documented xorshift64* generator, and the
//!   chi-square / F / Hotelling quantiles.
//! - [`tape`], [`adam`]: reverse-mode differentiation over matrix primitives
//!   and the optimizer driving it.
//! - [`gaussian`], [`bnn`]: the Gaussian prediction head and the mean-field
//!   variational network with Flipout batch perturbations.
//! - [`losses`]: Gaussian KL, the variational objective, and the
//!   alpha-divergence objective family.
//! - [`calibrate`]: scalar / triangular temperature scaling and last-layer
//!   fine-tuning calibrators.
//! - [`metrics`]: coverage curves, area score, R^2, predictive NLL, and the
//!   aleatoric/epistemic decomposition.

pub mod adam;
pub mod bnn;
pub mod calibrate;
pub mod error;
pub mod func;
pub mod gaussian;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod special;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use bnn::{BnnModel, McPredictionSet, VariationalLayer};
pub use calibrate::{Calibrator, Method};
pub use error::{CoreError, Result};
pub use gaussian::GaussianPrediction;
pub use linalg::Matrix;
pub use rng::Rng;
