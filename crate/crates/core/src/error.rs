//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Target distribution failed construction-time validation.
    #[error("invalid target: {0}")]
    InvalidTarget(String),

    /// Timestep grid parameters are inconsistent.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// Bad argument to an operation (shape mismatch, out-of-range index, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A model was evaluated at a time that is not on its grid.
    #[error("time {t} is not on the model's timestep grid")]
    OffGridTime { t: f64 },

    /// Normal-equation matrix too ill-conditioned to solve.
    #[error("singular design matrix (condition number {cond:.3e} exceeds 1e12)")]
    SingularDesign { cond: f64 },

    /// A covariance that must be SPD is not, or is numerically degenerate.
    #[error("ill-conditioned covariance: {0}")]
    IllConditioned(String),

    /// Oracle evaluated where the density has no score (point mass at t = 0).
    #[error("score undefined: {0}")]
    DegenerateEvaluation(String),

    /// NaN/Inf appeared mid-computation; context names the step.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Moment ratio with a vanishing denominator.
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
