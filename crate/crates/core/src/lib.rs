//! Score-matching laboratory core.
//!
//! Implements the Ornstein-Uhlenbeck forward process, denoising score
//! matching (DSM) with a shared time-conditioned approximator, bootstrapped
//! score matching (BSM) with per-timestep models, reverse-SDE sampling, and
//! a battery of Monte-Carlo identity verifiers that compare every estimator
//! against closed-form Gaussian/mixture oracles.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod sample;
pub mod schedule;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
pub use schedule::{sigma, sigma_sq, Schedule, ScheduleKind};
pub use targets::{sample_target, ScoreOracle, TargetSpec};

/// A score-function approximator or oracle `f(t, x)`.
///
/// Implementations must be cheap to evaluate concurrently; training mutates
/// parameters through concrete types, never through this trait.
pub trait ScoreFn: Sync {
    fn dim(&self) -> usize;

    /// Evaluate `f(t, x)` into `out` (both of length `dim()`).
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, x, &mut out)?;
        Ok(out)
    }
}

impl ScoreFn for ScoreOracle {
    fn dim(&self) -> usize {
        ScoreOracle::dim(self)
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.at(t)?.score_into(x, out);
        Ok(())
    }
}

impl<T: ScoreFn + ?Sized> ScoreFn for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_into(t, x, out)
    }
}
