//! Reusable experiment kernels shared by the CLI runner and the
//! acceptance suite.

use rayon::prelude::*;

use crate::analysis::empirical_l2;
use crate::dataset::{noise_dataset, NoiseCoupling};
use crate::error::Result;
use crate::linalg;
use crate::models::{Activation, LrSchedule, OptimConfig, TimeMlp};
use crate::rng::{stream, StreamDomain};
use crate::schedule::{Schedule, ScheduleKind};
use crate::targets::{sample_target_with, ScoreOracle, TargetSpec};
use crate::train::{
    train_bsm_linear, train_dsm, train_dsm_linear, AlphaMode, BsmConfig, DsmConfig,
};

/// Paired DSM/BSM run on a Gaussian target with exact per-timestep solves.
#[derive(Debug, Clone)]
pub struct GaussianLinearRun {
    pub times: Vec<f64>,
    /// Squared Frobenius error of the fitted map against `-Sigma_t^{-1}`.
    pub dsm_err: Vec<f64>,
    pub bsm_err: Vec<f64>,
    pub k0: usize,
}

impl GaussianLinearRun {
    /// Fraction of bootstrapped timesteps where BSM is at least as accurate.
    pub fn bsm_win_fraction(&self) -> f64 {
        let late = self.k0..self.times.len();
        let wins = late
            .clone()
            .filter(|&j| self.bsm_err[j] <= self.dsm_err[j])
            .count();
        wins as f64 / late.len() as f64
    }

    /// Mean late-segment (k > k0) errors as (dsm, bsm).
    pub fn late_means(&self) -> (f64, f64) {
        let late = self.k0..self.times.len();
        let n = late.len() as f64;
        let d: f64 = late.clone().map(|j| self.dsm_err[j]).sum::<f64>() / n;
        let b: f64 = late.map(|j| self.bsm_err[j]).sum::<f64>() / n;
        (d, b)
    }
}

/// One seed of the Gaussian linear-score comparison: covariance
/// `scale (M M^T + v v^T)`, exact least-squares per timestep, DSM against
/// sequential BSM with the given bootstrap weight.
pub fn gaussian_linear_compare(
    d: usize,
    m: usize,
    n_steps: usize,
    horizon: f64,
    cov_scale: f64,
    k0: usize,
    alpha_mode: AlphaMode,
    seed: u64,
) -> Result<GaussianLinearRun> {
    let mut rng = stream(seed, StreamDomain::Experiment, 0);
    let sigma = linalg::random_factor_cov(d, cov_scale, &mut rng);
    let target = TargetSpec::gaussian(sigma)?;
    let schedule = Schedule::new(ScheduleKind::Linear, n_steps, horizon)?;
    gaussian_linear_compare_on(&target, m, &schedule, k0, alpha_mode, seed)
}

/// Same comparison on a caller-supplied Gaussian target and schedule.
pub fn gaussian_linear_compare_on(
    target: &TargetSpec,
    m: usize,
    schedule: &Schedule,
    k0: usize,
    alpha_mode: AlphaMode,
    seed: u64,
) -> Result<GaussianLinearRun> {
    let d = target.dim();
    let n_steps = schedule.len();
    let oracle = ScoreOracle::with_schedule(target.clone(), schedule)?;
    let mut rng = stream(seed, StreamDomain::Experiment, 1);
    let x0 = sample_target_with(target, m, &mut rng)?;
    let ds = noise_dataset(x0, d, schedule.clone(), seed, NoiseCoupling::Dependent)?;

    let dsm = train_dsm_linear(&ds)?;
    let bsm_cfg = BsmConfig {
        k0,
        alpha_mode,
        per_step_epochs: 1,
        first_step_epochs: None,
        batch_size: m,
        optimizer: OptimConfig::adamw(1e-3),
        lr_schedule: LrSchedule::Constant,
        seed,
    };
    let bsm = train_bsm_linear(&ds, &bsm_cfg)?;

    let mut dsm_err = Vec::with_capacity(n_steps);
    let mut bsm_err = Vec::with_capacity(n_steps);
    for j in 0..n_steps {
        let t = schedule.time(j);
        let truth = oracle.hessian(t, &vec![0.0; d])?; // -Sigma_t^{-1}
        let gap_d = dsm.map(j).0 - &truth;
        let gap_b = bsm.map(j).0 - &truth;
        dsm_err.push(linalg::frobenius(&gap_d).powi(2));
        bsm_err.push(linalg::frobenius(&gap_b).powi(2));
    }
    Ok(GaussianLinearRun { times: schedule.times().to_vec(), dsm_err, bsm_err, k0 })
}

/// Hyperparameters of one dimension-sweep cell.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub m_train: usize,
    pub m_test: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Scale per-timestep errors by sigma_t^2 (the noise-prediction error
    /// convention) instead of raw score-space error.
    pub noise_space_error: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            m_train: 1000,
            m_test: 1000,
            n_steps: 50,
            horizon: 5.0,
            hidden: 128,
            epochs: 50,
            batch_size: 512,
            lr: 1e-3,
            noise_space_error: false,
        }
    }
}

/// Result of one `(d, seed)` cell.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub d: usize,
    pub seed: u64,
    pub n_params: usize,
    /// Per-timestep mean squared score error on held-out trajectories.
    pub per_timestep: Vec<f64>,
    /// Time-averaged error over the grid tail (drops the first timestep).
    pub time_avg_error: f64,
}

impl SweepPoint {
    /// `E~(d)`: time-averaged error scaled by parameter count and log log d.
    pub fn scaled_error(&self) -> f64 {
        self.time_avg_error / (self.n_params as f64 * (self.d as f64).ln().ln())
    }
}

/// Train a shared time-conditioned MLP on joint DSM for one `(d, seed)`
/// cell of the dimension sweep and evaluate on fresh trajectories.
///
/// The target is `N(0, Q diag(U(1,2)) Q^T)` with a random rotation `Q`.
pub fn dimension_sweep_point(
    d: usize,
    settings: &SweepSettings,
    seed: u64,
) -> Result<SweepPoint> {
    let mut rng = stream(seed, StreamDomain::Experiment, d as u64);
    let sigma = linalg::random_spd_uniform_eigs(d, 1.0, 2.0, &mut rng);
    let target = TargetSpec::gaussian(sigma)?;
    let schedule = Schedule::new(ScheduleKind::Linear, settings.n_steps, settings.horizon)?;
    let oracle = ScoreOracle::with_schedule(target.clone(), &schedule)?;

    let x0 = sample_target_with(&target, settings.m_train, &mut rng)?;
    let ds = noise_dataset(x0, d, schedule.clone(), seed, NoiseCoupling::Dependent)?;

    let mut mlp = TimeMlp::new(
        d,
        &[settings.hidden],
        Activation::Tanh,
        schedule.times().to_vec(),
        schedule.horizon(),
        seed,
        0,
    )?;
    let cfg = DsmConfig {
        epochs: settings.epochs,
        batch_size: settings.batch_size,
        optimizer: OptimConfig::adamw(settings.lr),
        lr_schedule: LrSchedule::CosineWarmup { warmup_frac: 0.1 },
        seed,
    };
    train_dsm(&mut mlp, &ds, &cfg)?;

    let x0_test = sample_target_with(&target, settings.m_test, &mut rng)?;
    let test =
        noise_dataset(x0_test, d, schedule.clone(), seed ^ 0x5eed, NoiseCoupling::Dependent)?;
    let report = empirical_l2(&mlp, &oracle, &test)?;
    let mut per_timestep = report.values();
    if settings.noise_space_error {
        for (j, v) in per_timestep.iter_mut().enumerate() {
            *v *= schedule.sigma_sq(j);
        }
    }
    let tail = &per_timestep[1..];
    let time_avg_error = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(SweepPoint { d, seed, n_params: mlp.n_params(), per_timestep, time_avg_error })
}

/// Run the full sweep grid in parallel (order-independent by construction).
pub fn dimension_sweep(
    dims: &[usize],
    seeds: &[u64],
    settings: &SweepSettings,
) -> Result<Vec<SweepPoint>> {
    let mut jobs: Vec<(usize, u64)> = Vec::new();
    for &d in dims {
        for &s in seeds {
            jobs.push((d, s));
        }
    }
    jobs.par_iter()
        .map(|&(d, s)| dimension_sweep_point(d, settings, s))
        .collect()
}

/// Mean scaled error per dimension, in the order of `dims`.
pub fn scaled_error_profile(points: &[SweepPoint], dims: &[usize]) -> Vec<f64> {
    dims.iter()
        .map(|&d| {
            let sel: Vec<f64> =
                points.iter().filter(|p| p.d == d).map(|p| p.scaled_error()).collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        })
        .collect()
}
