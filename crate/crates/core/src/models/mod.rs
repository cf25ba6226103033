//! Score-function approximators and their optimizers.

pub mod linear;
pub mod mlp;
pub mod optim;

pub use linear::{fit_affine, fit_linear_least_squares, LinearScoreModel};
pub use mlp::{Activation, MlpScratch, TimeMlp, TrainBatch};
pub use optim::{LrSchedule, OptimConfig, Optimizer};

use crate::error::{Error, Result};
use crate::ScoreFn;

/// One independent model per timestep (the sequential-trainer output for
/// MLP function classes); dispatches evaluation by grid time.
pub struct TimestepModels {
    times: Vec<f64>,
    models: Vec<TimeMlp>,
}

impl TimestepModels {
    pub fn new(times: Vec<f64>, models: Vec<TimeMlp>) -> Result<Self> {
        if times.len() != models.len() || times.is_empty() {
            return Err(Error::InvalidArgument(
                "need one model per timestep".into(),
            ));
        }
        Ok(TimestepModels { times, models })
    }

    pub fn models(&self) -> &[TimeMlp] {
        &self.models
    }

    fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * t.abs().max(1.0);
        self.times.iter().position(|&u| (u - t).abs() <= tol)
    }
}

impl ScoreFn for TimestepModels {
    fn dim(&self) -> usize {
        self.models[0].out_dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let j = self.index_of(t).ok_or(Error::OffGridTime { t })?;
        self.models[j].eval_into(t, x, out)
    }
}
