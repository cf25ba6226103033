//! SGD and AdamW with constant or warmup-cosine learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimConfig {
    Sgd { lr: f64 },
    AdamW { lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimConfig {
    /// AdamW with the usual (0.9, 0.999, 1e-8) moments and no decay.
    pub fn adamw(lr: f64) -> Self {
        OptimConfig::AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            OptimConfig::Sgd { lr } | OptimConfig::AdamW { lr, .. } => *lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup from 0 to the base rate over `warmup_frac` of the run,
    /// then cosine decay to 0 at the final step.
    CosineWarmup { warmup_frac: f64 },
}

impl LrSchedule {
    /// Multiplier applied to the base learning rate at `step` of `total`.
    pub fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::CosineWarmup { warmup_frac } => {
                let total = total.max(1);
                let warmup = ((total as f64) * warmup_frac).round() as usize;
                if warmup > 0 && step < warmup {
                    step as f64 / warmup as f64
                } else {
                    let decay_steps = (total - warmup).max(1);
                    let progress = (step - warmup) as f64 / decay_steps as f64;
                    0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
                }
            }
        }
    }
}

/// Mutable optimizer state; moment buffers shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimConfig,
    schedule: LrSchedule,
    total_steps: usize,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, schedule: LrSchedule, total_steps: usize, n_params: usize) -> Self {
        let (m, v) = match cfg {
            OptimConfig::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimConfig::AdamW { .. } => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Optimizer { cfg, schedule, total_steps, step: 0, m, v }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Learning rate that the next `step` call will use.
    pub fn current_lr(&self) -> f64 {
        self.cfg.base_lr() * self.schedule.factor(self.step, self.total_steps)
    }

    /// One update of `params` in place. Rejects non-finite gradients.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::InvalidArgument("param/grad shape mismatch".into()));
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite gradient at coordinate {bad} on step {}",
                self.step
            )));
        }
        let lr = self.current_lr();
        match self.cfg {
            OptimConfig::Sgd { .. } => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimConfig::AdamW { beta1, beta2, eps, weight_decay, .. } => {
                let t = (self.step + 1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    // Decoupled weight decay, applied directly to the parameter.
                    params[i] -= lr * weight_decay * params[i];
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}
