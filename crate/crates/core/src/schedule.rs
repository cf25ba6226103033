//! Timestep grids for the forward/reverse processes.
//!
//! A schedule is a strictly increasing grid `t_1 < ... < t_N` (all
//! positive, `t_0 := 0` implicitly) together with per-step weights
//! `gamma_j`. For grids built by [`Schedule::new`] the weights are the
//! consecutive differences `t_j - t_{j-1}`; strided grids produced by
//! subsampling carry the coarse weight `k * delta` instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise level `sigma_t = sqrt(1 - e^{-2t})` of the forward process.
///
/// Uses `expm1` so that tiny times (quadratic grids start at `t = 1e-6`)
/// do not lose precision to cancellation.
pub fn sigma(t: f64) -> f64 {
    sigma_sq(t).sqrt()
}

/// `sigma_t^2 = 1 - e^{-2t}`, computed as `-expm1(-2t)`.
pub fn sigma_sq(t: f64) -> f64 {
    -(-2.0 * t).exp_m1()
}

/// Grid family. `Strided` only arises from [`crate::sample::subsample_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
    Quadratic,
    Strided { stride: usize, offset: usize },
}

/// Discretized timestep grid with weights and noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct Schedule {
    kind: ScheduleKind,
    times: Vec<f64>,
    weights: Vec<f64>,
    horizon: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct RawSchedule {
    #[serde(flatten)]
    kind: ScheduleKind,
    times: Vec<f64>,
    weights: Vec<f64>,
    horizon: f64,
}

impl TryFrom<RawSchedule> for Schedule {
    type Error = Error;
    fn try_from(raw: RawSchedule) -> Result<Self> {
        Schedule::from_parts(raw.kind, raw.times, raw.weights, raw.horizon)
    }
}

impl From<Schedule> for RawSchedule {
    fn from(s: Schedule) -> Self {
        RawSchedule { kind: s.kind, times: s.times, weights: s.weights, horizon: s.horizon }
    }
}

impl Schedule {
    /// Build a linear (`t_j = j T / N`) or quadratic grid.
    ///
    /// The quadratic grid squares a linspace of square roots,
    /// `t_j = (0.001 + (j-1)(sqrt(T) - 0.001)/(N-1))^2`, so `t_1 = 1e-6` and
    /// `t_N = T` exactly; weights are recomputed as differences.
    pub fn new(kind: ScheduleKind, n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSchedule("need at least one timestep".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidSchedule(format!("horizon must be positive, got {horizon}")));
        }
        let times: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let delta = horizon / n as f64;
                (1..=n).map(|j| j as f64 * delta).collect()
            }
            ScheduleKind::Quadratic => {
                if n == 1 {
                    vec![horizon]
                } else {
                    let lo = 0.001;
                    let hi = horizon.sqrt();
                    if hi <= lo {
                        return Err(Error::InvalidSchedule(
                            "quadratic grid needs sqrt(horizon) > 0.001".into(),
                        ));
                    }
                    (0..n)
                        .map(|j| {
                            // Pin the endpoint so t_N = T exactly.
                            if j + 1 == n {
                                horizon
                            } else {
                                let r = lo + j as f64 * (hi - lo) / (n - 1) as f64;
                                r * r
                            }
                        })
                        .collect()
                }
            }
            ScheduleKind::Strided { .. } => {
                return Err(Error::InvalidSchedule(
                    "strided schedules are built by subsampling a linear one".into(),
                ))
            }
        };
        let mut weights = Vec::with_capacity(n);
        let mut prev = 0.0;
        for &t in &times {
            weights.push(t - prev);
            prev = t;
        }
        Self::from_parts(kind, times, weights, horizon)
    }

    /// Assemble from explicit parts, checking the grid invariants.
    pub fn from_parts(
        kind: ScheduleKind,
        times: Vec<f64>,
        weights: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != weights.len() {
            return Err(Error::InvalidSchedule("times/weights length mismatch or empty".into()));
        }
        let mut prev = 0.0;
        for (&t, &w) in times.iter().zip(&weights) {
            if !(t > prev) {
                return Err(Error::InvalidSchedule(format!(
                    "timesteps must be strictly increasing and positive (got {t} after {prev})"
                )));
            }
            if !(w > 0.0) {
                return Err(Error::InvalidSchedule(format!("weight {w} at t={t} must be > 0")));
            }
            prev = t;
        }
        let t_n = *times.last().unwrap();
        if (t_n - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::InvalidSchedule(format!(
                "horizon {horizon} does not match final timestep {t_n}"
            )));
        }
        Ok(Schedule { kind, times, weights, horizon })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Grid times `t_1..t_N` (0-indexed in code).
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Per-step weights `gamma_1..gamma_N`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn time(&self, j: usize) -> f64 {
        self.times[j]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Noise level at grid index `j`.
    pub fn sigma(&self, j: usize) -> f64 {
        sigma(self.times[j])
    }

    pub fn sigma_sq(&self, j: usize) -> f64 {
        sigma_sq(self.times[j])
    }

    /// Uniform step size; `None` unless the grid is linear.
    pub fn delta(&self) -> Option<f64> {
        match self.kind {
            ScheduleKind::Linear => Some(self.horizon / self.times.len() as f64),
            _ => None,
        }
    }

    /// Rebuild a schedule from stored grid times (checkpoint loading):
    /// uniform gaps are recognized as linear, anything else is kept as an
    /// explicit monotone grid under the quadratic label.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidSchedule("empty time grid".into()));
        }
        let horizon = *times.last().unwrap();
        let mut weights = Vec::with_capacity(times.len());
        let mut prev = 0.0;
        for &t in times {
            weights.push(t - prev);
            prev = t;
        }
        let delta = times[0];
        let uniform = weights.iter().all(|&w| (w - delta).abs() <= 1e-9 * delta.abs().max(1e-12));
        let kind = if uniform { ScheduleKind::Linear } else { ScheduleKind::Quadratic };
        Self::from_parts(kind, times.to_vec(), weights, horizon)
    }

    /// Index of the grid time equal to `t` (to 1e-12 relative), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        // Grids are tiny (N <= a few thousand); a scan keeps the exactness
        // semantics obvious.
        let tol = 1e-12 * t.abs().max(1.0);
        self.times.iter().position(|&u| (u - t).abs() <= tol)
    }
}
