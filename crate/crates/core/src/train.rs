//! DSM and BSM trainers.
//!
//! DSM regresses `f(t, x_t)` on the unbiased target `-z_t / sigma_t^2`,
//! jointly over all timesteps for the shared MLP or exactly per timestep
//! for affine models. BSM walks the grid in increasing `k`: the first `k0`
//! timesteps are plain per-timestep DSM; afterwards the target is blended
//! with a correction built from the previous timestep's learned score,
//!
//! ```text
//! y~_k = -z_k/sigma_k^2 + alpha_k (s_hat_{k-1}(x_{k-1}) + z_{k-1}/sigma_{k-1}^2)
//! ```
//!
//! which has the same conditional mean given `x_{t_k}` but, for alpha near
//! e^{-gamma_k} sigma_{k-1}^2 / sigma_k^2, a variance smaller by a factor
//! of order gamma_k. Models are fit sequentially and the targets for step
//! k are materialized once (the previous model is frozen when k advances).

use serde::{Deserialize, Serialize};

use crate::dataset::NoisedDataset;
use crate::error::{Error, Result};
use crate::models::{
    fit_linear_least_squares, Activation, LinearScoreModel, MlpScratch, Optimizer, TimeMlp,
    TimestepModels, TrainBatch,
};
use crate::models::{LrSchedule, OptimConfig};
use crate::rng::{stream, StreamDomain};
use crate::schedule::sigma_sq;
use crate::ScoreFn;

/// One optimizer step in a loss trace.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Joint-DSM training configuration for the shared MLP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DsmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

/// The empirical joint objective
/// `(1/mN) sum_{i,j} ||f(t_j, x_j^{(i)}) + z_j^{(i)}/sigma_j^2||^2`.
pub fn dsm_total_loss(model: &dyn ScoreFn, dataset: &NoisedDataset) -> Result<f64> {
    dsm_total_loss_indexed(dataset, |_, j, x, out| model.eval_into(dataset.schedule().time(j), x, out))
}

/// Same sum with an index-aware evaluator; lets tests plug per-sample
/// "cheating" predictors that are functions of the trajectory, not of x.
pub(crate) fn dsm_total_loss_indexed<F>(dataset: &NoisedDataset, mut f: F) -> Result<f64>
where
    F: FnMut(usize, usize, &[f64], &mut [f64]) -> Result<()>,
{
    let (m, n, d) = (dataset.m(), dataset.n_steps(), dataset.dim());
    let mut out = vec![0.0; d];
    let inv_s2: Vec<f64> = (0..n).map(|j| 1.0 / dataset.schedule().sigma_sq(j)).collect();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            f(i, j, dataset.state(i, j), &mut out)?;
            let z = dataset.noise(i, j);
            let mut q = 0.0;
            for c in 0..d {
                let r = out[c] + z[c] * inv_s2[j];
                q += r * r;
            }
            total += q;
        }
    }
    Ok(total / (m * n) as f64)
}

/// DSM regression targets `-z_j/sigma_j^2` at timestep `j`, flat `m x d`.
pub fn dsm_targets(dataset: &NoisedDataset, j: usize) -> Vec<f64> {
    let (m, d) = (dataset.m(), dataset.dim());
    let inv_s2 = 1.0 / dataset.schedule().sigma_sq(j);
    let mut y = Vec::with_capacity(m * d);
    for i in 0..m {
        for &zc in dataset.noise(i, j) {
            y.push(-zc * inv_s2);
        }
    }
    y
}

/// Exact per-timestep DSM for affine models (normal-equation solves).
pub fn train_dsm_linear(dataset: &NoisedDataset) -> Result<LinearScoreModel> {
    let n = dataset.n_steps();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for j in 0..n {
        let y = dsm_targets(dataset, j);
        let (aj, bj) = fit_linear_least_squares(dataset, j, &y)?;
        a.push(aj);
        b.push(bj);
    }
    LinearScoreModel::new(dataset.schedule().times().to_vec(), a, b)
}

/// Minibatch DSM on the shared time-conditioned MLP.
///
/// Every epoch shuffles all `(i, j)` pairs with
/// `stream(seed, BatchShuffle, epoch)` and consumes them in order, so the
/// trace is deterministic for a fixed config. Returns the loss trace.
pub fn train_dsm(
    mlp: &mut TimeMlp,
    dataset: &NoisedDataset,
    cfg: &DsmConfig,
) -> Result<Vec<TracePoint>> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let (m, n, d) = (dataset.m(), dataset.n_steps(), dataset.dim());
    let pairs_total = m * n;
    let steps_per_epoch = pairs_total.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_schedule, total_steps, mlp.n_params());
    let mut scratch = MlpScratch::new();
    let mut grad = vec![0.0; mlp.n_params()];
    let mut trace = Vec::with_capacity(total_steps);
    let mut order: Vec<u32> = (0..pairs_total as u32).collect();
    let inv_s2: Vec<f64> = (0..n).map(|j| 1.0 / dataset.schedule().sigma_sq(j)).collect();
    let times = dataset.schedule().times().to_vec();

    let mut batch = TrainBatch::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, StreamDomain::BatchShuffle, epoch as u64);
        fisher_yates(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            for &pair in chunk {
                let (i, j) = ((pair as usize) / n, (pair as usize) % n);
                batch.t.push(times[j]);
                batch.x.extend_from_slice(dataset.state(i, j));
                let z = dataset.noise(i, j);
                for c in 0..d {
                    batch.y.push(-z[c] * inv_s2[j]);
                }
            }
            let lr = opt.current_lr();
            let loss = mlp.loss_and_grad(&batch, &mut scratch, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "DSM loss diverged at step {step} (epoch {epoch})"
                )));
            }
            opt.step(mlp.params_mut(), &grad)?;
            trace.push(TracePoint { step, loss, lr });
            step += 1;
        }
    }
    Ok(trace)
}

fn fisher_yates(order: &mut [u32], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Which bootstrap weight to use for the BSM blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlphaMode {
    /// `e^{-Delta} sigma_{t'}^2 / sigma_t^2` (the variance-reduction form;
    /// the default).
    Lemma,
    /// `e^{-Delta} sqrt(sigma_{t'}^2 / sigma_t^2)`.
    Sqrt,
    /// A constant in [0, 1].
    Fixed { value: f64 },
    /// `1 - sigma_t / (sigma_{t-t'} + sigma_t)`.
    Adaptive,
}

impl Default for AlphaMode {
    fn default() -> Self {
        AlphaMode::Lemma
    }
}

/// Bootstrap weight `alpha` for the step `t_prev -> t`.
pub fn alpha(t_prev: f64, t: f64, mode: AlphaMode) -> Result<f64> {
    if !(t_prev >= 0.0) || t_prev >= t {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= t_prev < t, got t_prev={t_prev}, t={t}"
        )));
    }
    let value = match mode {
        AlphaMode::Lemma => (-(t - t_prev)).exp() * sigma_sq(t_prev) / sigma_sq(t),
        AlphaMode::Sqrt => (-(t - t_prev)).exp() * (sigma_sq(t_prev) / sigma_sq(t)).sqrt(),
        AlphaMode::Fixed { value } => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidArgument(format!(
                    "fixed alpha must lie in [0,1], got {value}"
                )));
            }
            value
        }
        AlphaMode::Adaptive => {
            let s_t = sigma_sq(t).sqrt();
            let s_gap = sigma_sq(t - t_prev).sqrt();
            1.0 - s_t / (s_gap + s_t)
        }
    };
    Ok(value)
}

/// Materialized bootstrapped targets for one timestep.
#[derive(Debug, Clone)]
pub struct BsmTargets {
    /// Flat `m x d` targets.
    pub targets: Vec<f64>,
    pub alpha: f64,
}

/// Build `y~` at timestep `k` (0-based, `k >= 1`) from the frozen model of
/// timestep `k-1`.
pub fn bsm_targets(
    dataset: &NoisedDataset,
    k: usize,
    prev_model: &dyn ScoreFn,
    alpha_k: f64,
) -> Result<BsmTargets> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "bootstrapped targets need a previous timestep (k >= 1)".into(),
        ));
    }
    if k >= dataset.n_steps() {
        return Err(Error::InvalidArgument(format!(
            "timestep index {k} out of range (N = {})",
            dataset.n_steps()
        )));
    }
    let (m, d) = (dataset.m(), dataset.dim());
    let sched = dataset.schedule();
    let (t_prev, _t) = (sched.time(k - 1), sched.time(k));
    let inv_s2 = 1.0 / sched.sigma_sq(k);
    let inv_s2_prev = 1.0 / sched.sigma_sq(k - 1);
    let mut targets = Vec::with_capacity(m * d);
    let mut s_prev = vec![0.0; d];
    for i in 0..m {
        prev_model.eval_into(t_prev, dataset.state(i, k - 1), &mut s_prev)?;
        let z = dataset.noise(i, k);
        let z_prev = dataset.noise(i, k - 1);
        for c in 0..d {
            targets
                .push(-z[c] * inv_s2 + alpha_k * (s_prev[c] + z_prev[c] * inv_s2_prev));
        }
    }
    Ok(BsmTargets { targets, alpha: alpha_k })
}

/// BSM configuration; `k0` counts the leading DSM-trained timesteps
/// (1-based, `1 <= k0 <= N`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BsmConfig {
    pub k0: usize,
    #[serde(default)]
    pub alpha_mode: AlphaMode,
    /// Epochs spent on each timestep's model (MLP path).
    pub per_step_epochs: usize,
    /// Extra epochs for the cold-started first timestep (MLP path).
    pub first_step_epochs: Option<usize>,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

impl BsmConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.k0 == 0 || self.k0 > n {
            return Err(Error::InvalidArgument(format!(
                "k0 must satisfy 1 <= k0 <= N = {n}, got {}",
                self.k0
            )));
        }
        Ok(())
    }

    fn alpha_at(&self, dataset: &NoisedDataset, k: usize) -> Result<f64> {
        let sched = dataset.schedule();
        alpha(sched.time(k - 1), sched.time(k), self.alpha_mode)
    }
}

/// Sequential BSM with exact affine solves per timestep.
///
/// With `k0 = N` this is bit-identical to [`train_dsm_linear`].
pub fn train_bsm_linear(dataset: &NoisedDataset, cfg: &BsmConfig) -> Result<LinearScoreModel> {
    let n = dataset.n_steps();
    cfg.validate(n)?;
    let times = dataset.schedule().times().to_vec();
    let mut model = LinearScoreModel::new(
        times.clone(),
        vec![nalgebra::DMatrix::zeros(dataset.dim(), dataset.dim()); n],
        vec![nalgebra::DVector::zeros(dataset.dim()); n],
    )?;
    for k in 0..n {
        let targets = if k + 1 <= cfg.k0 {
            dsm_targets(dataset, k)
        } else {
            let a_k = cfg.alpha_at(dataset, k)?;
            bsm_targets(dataset, k, &model, a_k)?.targets
        };
        let (a, b) = fit_linear_least_squares(dataset, k, &targets)
            .map_err(|e| Error::NumericFailure(format!("timestep {k}: {e}")))?;
        model.set_map(k, a, b);
    }
    Ok(model)
}

/// Architecture of the per-timestep MLPs used by the sequential trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpArch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Sequential BSM with one MLP per timestep, warm-started from the previous
/// timestep's parameters.
pub fn train_bsm_mlp(
    dataset: &NoisedDataset,
    arch: &MlpArch,
    cfg: &BsmConfig,
) -> Result<TimestepModels> {
    let n = dataset.n_steps();
    cfg.validate(n)?;
    let times = dataset.schedule().times().to_vec();
    let mut models: Vec<TimeMlp> = Vec::with_capacity(n);
    for k in 0..n {
        let mut mlp = if k == 0 {
            TimeMlp::new(
                dataset.dim(),
                &arch.hidden,
                arch.activation,
                times.clone(),
                dataset.schedule().horizon(),
                cfg.seed,
                0,
            )?
        } else {
            models[k - 1].clone()
        };
        let targets = if k + 1 <= cfg.k0 {
            dsm_targets(dataset, k)
        } else {
            let a_k = cfg.alpha_at(dataset, k)?;
            bsm_targets(dataset, k, &models[k - 1], a_k)?.targets
        };
        let epochs = if k == 0 {
            cfg.first_step_epochs.unwrap_or(cfg.per_step_epochs)
        } else {
            cfg.per_step_epochs
        };
        fit_mlp_single_timestep(&mut mlp, dataset, k, &targets, epochs, cfg)
            .map_err(|e| Error::NumericFailure(format!("timestep {k}: {e}")))?;
        models.push(mlp);
    }
    TimestepModels::new(times, models)
}

/// Independent per-timestep DSM with MLPs (no bootstrap anywhere).
///
/// Deliberately a separate loop from [`train_bsm_mlp`] so the
/// `k0 = N` equivalence can be checked across two code paths.
pub fn train_per_timestep_dsm_mlp(
    dataset: &NoisedDataset,
    arch: &MlpArch,
    cfg: &BsmConfig,
) -> Result<TimestepModels> {
    let n = dataset.n_steps();
    let times = dataset.schedule().times().to_vec();
    let mut models: Vec<TimeMlp> = Vec::with_capacity(n);
    for k in 0..n {
        let mut mlp = if k == 0 {
            TimeMlp::new(
                dataset.dim(),
                &arch.hidden,
                arch.activation,
                times.clone(),
                dataset.schedule().horizon(),
                cfg.seed,
                0,
            )?
        } else {
            models[k - 1].clone()
        };
        let targets = dsm_targets(dataset, k);
        let epochs = if k == 0 {
            cfg.first_step_epochs.unwrap_or(cfg.per_step_epochs)
        } else {
            cfg.per_step_epochs
        };
        fit_mlp_single_timestep(&mut mlp, dataset, k, &targets, epochs, cfg)?;
        models.push(mlp);
    }
    TimestepModels::new(times, models)
}

fn fit_mlp_single_timestep(
    mlp: &mut TimeMlp,
    dataset: &NoisedDataset,
    k: usize,
    targets: &[f64],
    epochs: usize,
    cfg: &BsmConfig,
) -> Result<()> {
    let (m, d) = (dataset.m(), dataset.dim());
    let t = dataset.schedule().time(k);
    let steps_per_epoch = m.div_ceil(cfg.batch_size);
    let total_steps = epochs * steps_per_epoch;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_schedule, total_steps, mlp.n_params());
    let mut scratch = MlpScratch::new();
    let mut grad = vec![0.0; mlp.n_params()];
    let mut order: Vec<u32> = (0..m as u32).collect();
    let mut batch = TrainBatch::default();
    for epoch in 0..epochs {
        // Unique shuffle stream per (timestep, epoch).
        let idx = ((k as u64) << 20) | epoch as u64;
        let mut rng = stream(cfg.seed, StreamDomain::BatchShuffle, idx);
        fisher_yates(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            for &i in chunk {
                let i = i as usize;
                batch.t.push(t);
                batch.x.extend_from_slice(dataset.state(i, k));
                batch.y.extend_from_slice(&targets[i * d..(i + 1) * d]);
            }
            let loss = mlp.loss_and_grad(&batch, &mut scratch, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "loss diverged in epoch {epoch}"
                )));
            }
            opt.step(mlp.params_mut(), &grad)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{noise_dataset, NoiseCoupling};
    use crate::schedule::{Schedule, ScheduleKind};
    use crate::targets::{sample_target, ScoreOracle, TargetSpec};
    use nalgebra::DMatrix;

    fn small_dataset(m: usize, n: usize, d: usize, seed: u64) -> NoisedDataset {
        let target = TargetSpec::gaussian(DMatrix::identity(d, d)).unwrap();
        let x0 = sample_target(&target, m, seed).unwrap();
        let schedule = Schedule::new(ScheduleKind::Linear, n, 2.0).unwrap();
        noise_dataset(x0, d, schedule, seed, NoiseCoupling::Dependent).unwrap()
    }

    #[test]
    fn cheating_predictor_zeroes_the_loss() {
        let ds = small_dataset(16, 4, 2, 1);
        let loss = dsm_total_loss_indexed(&ds, |i, j, _x, out| {
            let inv = 1.0 / ds.schedule().sigma_sq(j);
            for (o, &z) in out.iter_mut().zip(ds.noise(i, j)) {
                *o = -z * inv;
            }
            Ok(())
        })
        .unwrap();
        assert!(loss < 1e-28);
    }

    #[test]
    fn zero_model_loss_matches_independent_resummation() {
        let ds = small_dataset(10, 3, 2, 2);
        let zero = LinearScoreModel::new(
            ds.schedule().times().to_vec(),
            vec![DMatrix::zeros(2, 2); 3],
            vec![nalgebra::DVector::zeros(2); 3],
        )
        .unwrap();
        let loss = dsm_total_loss(&zero, &ds).unwrap();
        // Re-sum in a different association order.
        let mut alt = 0.0;
        for j in 0..3 {
            let inv = 1.0 / ds.schedule().sigma_sq(j);
            let mut per_t = 0.0;
            for i in 0..10 {
                for &z in ds.noise(i, j) {
                    per_t += (z * inv) * (z * inv);
                }
            }
            alt += per_t;
        }
        alt /= 30.0;
        assert!((loss - alt).abs() <= 1e-12 * alt);
    }

    #[test]
    fn oracle_model_loss_concentrates_near_expected_value() {
        // For the stationary target the DSM residual -z/s^2 - s has
        // per-coordinate conditional variance e^{-2t}/sigma_t^2, so
        // E loss = (1/N) sum_j d e^{-2t_j} / sigma_{t_j}^2.
        let m = 40_000;
        let ds = small_dataset(m, 4, 2, 3);
        let oracle = ScoreOracle::new(TargetSpec::gaussian(DMatrix::identity(2, 2)).unwrap());
        let loss = dsm_total_loss(&oracle, &ds).unwrap();
        let expected: f64 = (0..4)
            .map(|j| {
                let t = ds.schedule().time(j);
                2.0 * (-2.0 * t).exp() / sigma_sq(t)
            })
            .sum::<f64>()
            / 4.0;
        let rel = (loss - expected).abs() / expected;
        assert!(rel < 0.05, "loss {loss} vs expected {expected}");
    }

    #[test]
    fn linear_dsm_recovers_gaussian_score_map() {
        let d = 2;
        let m = 100_000;
        let target = TargetSpec::gaussian(DMatrix::identity(d, d)).unwrap();
        let x0 = sample_target(&target, m, 7).unwrap();
        let schedule = Schedule::new(ScheduleKind::Linear, 2, 1.0).unwrap();
        let ds = noise_dataset(x0, d, schedule, 7, NoiseCoupling::Dependent).unwrap();
        let model = train_dsm_linear(&ds).unwrap();
        let tol = 5.0 / (m as f64).sqrt();
        for j in 0..2 {
            let (a, b) = model.map(j);
            // Stationary: -Sigma_t^{-1} = -I.
            let frob = ((a[(0, 0)] + 1.0).powi(2)
                + a[(0, 1)].powi(2)
                + a[(1, 0)].powi(2)
                + (a[(1, 1)] + 1.0).powi(2))
            .sqrt();
            assert!(frob < tol, "timestep {j}: map off by {frob}");
            assert!(b.norm() < tol);
        }
    }

    #[test]
    fn alpha_modes_and_edge_cases() {
        // sigma_0 = 0 makes both analytic modes vanish.
        assert_eq!(alpha(0.0, 0.5, AlphaMode::Lemma).unwrap(), 0.0);
        assert_eq!(alpha(0.0, 0.5, AlphaMode::Sqrt).unwrap(), 0.0);
        // t_prev -> t pushes both to 1.
        for mode in [AlphaMode::Lemma, AlphaMode::Sqrt] {
            let a = alpha(1.0 - 1e-9, 1.0, mode).unwrap();
            assert!((a - 1.0).abs() < 1e-6, "{mode:?} limit {a}");
        }
        // Value frozen from the defining formula e^{-0.1}(1-e^{-2})/(1-e^{-2.2}).
        let a = alpha(1.0, 1.1, AlphaMode::Lemma).unwrap();
        let direct = (-0.1f64).exp() * (-(-2.0f64).exp_m1()) / (-(-2.2f64).exp_m1());
        assert!((a - direct).abs() < 1e-15);
        assert!((a - 0.879_874).abs() < 1e-4, "lemma alpha {a}");

        assert!(alpha(0.5, 0.5, AlphaMode::Lemma).is_err());
        assert!(alpha(0.5, 0.4, AlphaMode::Lemma).is_err());
        assert!(alpha(0.1, 0.2, AlphaMode::Fixed { value: 1.5 }).is_err());
        assert_eq!(alpha(0.1, 0.2, AlphaMode::Fixed { value: 0.9 }).unwrap(), 0.9);
    }

    #[test]
    fn alpha_zero_reproduces_dsm_targets_exactly() {
        let ds = small_dataset(12, 3, 2, 4);
        let oracle = ScoreOracle::new(TargetSpec::gaussian(DMatrix::identity(2, 2)).unwrap());
        let bsm = bsm_targets(&ds, 1, &oracle, 0.0).unwrap();
        assert_eq!(bsm.targets, dsm_targets(&ds, 1));
        assert!(bsm_targets(&ds, 0, &oracle, 0.5).is_err());
    }

    #[test]
    fn cheating_prev_model_cancels_the_correction() {
        // If the previous "model" returns -z_{k-1}/sigma^2 pointwise, the
        // correction is identically zero for any alpha.
        let ds = small_dataset(9, 3, 2, 5);
        let k = 2;
        let inv_prev = 1.0 / ds.schedule().sigma_sq(k - 1);
        // Build an exact lookup keyed by the trajectory state bits.
        struct Lookup {
            map: std::collections::HashMap<(u64, u64), Vec<f64>>,
        }
        impl ScoreFn for Lookup {
            fn dim(&self) -> usize {
                2
            }
            fn eval_into(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
                let key = (x[0].to_bits(), x[1].to_bits());
                out.copy_from_slice(&self.map[&key]);
                Ok(())
            }
        }
        let mut map = std::collections::HashMap::new();
        for i in 0..9 {
            let x = ds.state(i, k - 1);
            let z = ds.noise(i, k - 1);
            map.insert(
                (x[0].to_bits(), x[1].to_bits()),
                z.iter().map(|&v| -v * inv_prev).collect(),
            );
        }
        let cheat = Lookup { map };
        for a_k in [0.3, 0.9] {
            let bsm = bsm_targets(&ds, k, &cheat, a_k).unwrap();
            let plain = dsm_targets(&ds, k);
            for (a, b) in bsm.targets.iter().zip(&plain) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bsm_with_k0_equal_n_matches_per_timestep_dsm_bit_exactly() {
        let ds = small_dataset(64, 4, 2, 6);
        let cfg = BsmConfig {
            k0: 4,
            alpha_mode: AlphaMode::Lemma,
            per_step_epochs: 2,
            first_step_epochs: Some(3),
            batch_size: 16,
            optimizer: OptimConfig::adamw(1e-3),
            lr_schedule: LrSchedule::Constant,
            seed: 11,
        };
        let arch = MlpArch { hidden: vec![6], activation: Activation::Tanh };
        let bsm = train_bsm_mlp(&ds, &arch, &cfg).unwrap();
        let dsm = train_per_timestep_dsm_mlp(&ds, &arch, &cfg).unwrap();
        for (a, b) in bsm.models().iter().zip(dsm.models()) {
            assert_eq!(a.params(), b.params(), "k0 = N must reduce BSM to DSM bit-exactly");
        }

        // Linear route: identical solves.
        let lin_bsm = train_bsm_linear(&ds, &cfg).unwrap();
        let lin_dsm = train_dsm_linear(&ds).unwrap();
        for j in 0..4 {
            assert_eq!(lin_bsm.map(j).0, lin_dsm.map(j).0);
            assert_eq!(lin_bsm.map(j).1, lin_dsm.map(j).1);
        }
    }

    #[test]
    fn zero_epochs_returns_init_model_unchanged() {
        let ds = small_dataset(8, 2, 2, 8);
        let mut mlp = TimeMlp::new(
            2,
            &[4],
            Activation::Tanh,
            ds.schedule().times().to_vec(),
            ds.schedule().horizon(),
            1,
            0,
        )
        .unwrap();
        let before = mlp.params().to_vec();
        let cfg = DsmConfig {
            epochs: 0,
            batch_size: 4,
            optimizer: OptimConfig::adamw(1e-3),
            lr_schedule: LrSchedule::Constant,
            seed: 1,
        };
        let trace = train_dsm(&mut mlp, &ds, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(mlp.params(), &before[..]);
    }

    #[test]
    fn dsm_training_reduces_loss_and_is_deterministic() {
        let ds = small_dataset(256, 4, 2, 9);
        let make = || {
            TimeMlp::new(
                2,
                &[16],
                Activation::Tanh,
                ds.schedule().times().to_vec(),
                ds.schedule().horizon(),
                5,
                0,
            )
            .unwrap()
        };
        let cfg = DsmConfig {
            epochs: 8,
            batch_size: 64,
            optimizer: OptimConfig::adamw(3e-3),
            lr_schedule: LrSchedule::CosineWarmup { warmup_frac: 0.1 },
            seed: 13,
        };
        let mut m1 = make();
        let trace = train_dsm(&mut m1, &ds, &cfg).unwrap();
        assert!(trace.iter().all(|p| p.loss.is_finite()));
        let first = trace.first().unwrap().loss;
        let last_avg: f64 =
            trace.iter().rev().take(4).map(|p| p.loss).sum::<f64>() / 4.0;
        assert!(last_avg < first, "training did not reduce the loss");

        let mut m2 = make();
        train_dsm(&mut m2, &ds, &cfg).unwrap();
        assert_eq!(m1.params(), m2.params(), "same seed+config must be bitwise identical");
    }
}
