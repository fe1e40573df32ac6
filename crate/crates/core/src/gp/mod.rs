//! Gaussian-process regression for vector-valued drift terms.
//!
//! One independent GP with a squared-exponential ARD kernel is fit per
//! state dimension. All dimensions share the same training inputs; targets
//! and kernel hyperparameters are per-dimension. Posterior queries go
//! through a cached Cholesky factorization of `K + sigma_f^2 I`, so a
//! fitted [`GpModel`] is cheap to evaluate and immutable by construction.

mod dataset;
mod kernel;
mod likelihood;
mod model;
mod state_box;

pub use dataset::Dataset;
pub use kernel::{KernelParams, SeKernel};
pub use likelihood::{log_marginal_likelihood, optimize_hyperparams, HyperFit, OptimizeOptions};
pub use model::GpModel;
pub use state_box::StateBox;

use thiserror::Error;

/// Errors produced while assembling data, fitting, or querying a GP.
#[derive(Debug, Error)]
pub enum GpError {
    /// Two containers that must agree on sample count or state dimension do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A hyperparameter or noise level violates its positivity constraint.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The Gram matrix `K + sigma_f^2 I` is not positive definite.
    #[error("Cholesky factorization of the Gram matrix failed for output dimension {dim} (jitter {jitter:e}); the kernel matrix is numerically singular")]
    FactorizationFailure { dim: usize, jitter: f64 },
    /// The dataset is empty or a CSV row is malformed.
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    /// Underlying CSV transport error.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
