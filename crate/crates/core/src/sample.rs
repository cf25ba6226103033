//! Reverse-SDE sampling and coarse-schedule (strided) fast inference.
//!
//! The denoising dynamics `dx = x dt + 2 s(T - t, x) dt + sqrt(2) dB` are
//! discretized backwards over the grid: a step from `t_j` down to `t_{j-1}`
//! evaluates the score at `t_j`. Two integrators:
//!
//! * Euler-Maruyama: `x <- x + g (x + 2 f) + sqrt(2 g) xi`
//! * exponential:    `x <- e^g (x + sigma_g^2 f) + sigma_g xi`,
//!   `sigma_g^2 = 1 - e^{-2g}`
//!
//! with `g` the step width. The exponential step applies the linear factor
//! `e^g` exactly and weights the score by `sigma_g^2 e^g = 2g + O(g^2)`;
//! when `f` is the true score its mean is the exact conditional mean of
//! the finer state given the coarser one, so the per-step bias sits only
//! in the noise term. It is the default. Chains start at `N(0, I)` as a
//! stand-in for `p_T` and stop at the smallest grid time.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamDomain};
use crate::schedule::{Schedule, ScheduleKind};
use crate::ScoreFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    EulerMaruyama,
    Exponential,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Exponential
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub integrator: Integrator,
    /// Stop before stepping below this time; defaults to the smallest grid
    /// time (the score at t = 0 may not exist).
    #[serde(default)]
    pub t_min: Option<f64>,
    /// Force xi = 0: the recursion becomes deterministic (testing aid).
    #[serde(default)]
    pub zero_noise: bool,
}

/// Generated samples, flat row-major `n x d`.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub d: usize,
    pub data: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Run `cfg.n` reverse chains over the schedule.
///
/// Chain `c` draws from `stream(seed, ReverseChain, c)`: first the `d`
/// coordinates of the start state, then one normal vector per step. NaN or
/// infinite states abort with the offending timestep.
pub fn reverse_sample(
    score: &dyn ScoreFn,
    schedule: &Schedule,
    cfg: &SamplerConfig,
) -> Result<SampleSet> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    let d = score.dim();
    let times = schedule.times();
    let t_min = cfg.t_min.unwrap_or(times[0]);
    if t_min < times[0] - 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "t_min {t_min} is below the smallest grid time {}",
            times[0]
        )));
    }

    let mut data = vec![0.0; cfg.n * d];
    let results: Vec<Result<()>> = data
        .par_chunks_mut(d)
        .enumerate()
        .map(|(chain, x)| {
            let mut rng = stream(cfg.seed, StreamDomain::ReverseChain, chain as u64);
            for v in x.iter_mut() {
                *v = if cfg.zero_noise { 0.0 } else { rng.sample(StandardNormal) };
            }
            let mut f = vec![0.0; d];
            for j in (1..times.len()).rev() {
                let (t_hi, t_lo) = (times[j], times[j - 1]);
                if t_lo < t_min - 1e-12 {
                    break;
                }
                let g = t_hi - t_lo;
                score.eval_into(t_hi, x, &mut f)?;
                match cfg.integrator {
                    Integrator::EulerMaruyama => {
                        let noise_sd = (2.0 * g).sqrt();
                        for c in 0..d {
                            let xi: f64 =
                                if cfg.zero_noise { 0.0 } else { rng.sample(StandardNormal) };
                            x[c] += g * (x[c] + 2.0 * f[c]) + noise_sd * xi;
                        }
                    }
                    Integrator::Exponential => {
                        let grow = g.exp();
                        let s2 = -(-2.0 * g).exp_m1();
                        let noise_sd = s2.sqrt();
                        for c in 0..d {
                            let xi: f64 =
                                if cfg.zero_noise { 0.0 } else { rng.sample(StandardNormal) };
                            x[c] = grow * (x[c] + s2 * f[c]) + noise_sd * xi;
                        }
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NumericFailure(format!(
                        "chain {chain} became non-finite stepping to t = {t_lo}"
                    )));
                }
            }
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(SampleSet { d, data })
}

/// Stride-`k` subset of a linear schedule: keeps `t_j` with `j = offset
/// (mod k)` (`offset` in `1..=k`, 1-based) and assigns every kept step the
/// coarse weight `k * delta`.
pub fn subsample_schedule(schedule: &Schedule, k: usize, offset: usize) -> Result<Schedule> {
    if !matches!(schedule.kind(), ScheduleKind::Linear) {
        return Err(Error::InvalidArgument(
            "only linear schedules can be strided".into(),
        ));
    }
    let n = schedule.len();
    if k == 0 || k > n || offset == 0 || offset > k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= offset <= k <= N (k={k}, offset={offset}, N={n})"
        )));
    }
    if k == 1 {
        return Ok(schedule.clone());
    }
    let delta = schedule.delta().expect("linear schedule has a delta");
    let times: Vec<f64> = (offset..=n)
        .step_by(k)
        .map(|j| schedule.time(j - 1))
        .collect();
    let weights = vec![k as f64 * delta; times.len()];
    let horizon = *times.last().unwrap();
    Schedule::from_parts(
        ScheduleKind::Strided { stride: k, offset },
        times,
        weights,
        horizon,
    )
}

/// Result of the coarse-subset search.
#[derive(Debug, Clone)]
pub struct BestSubset {
    /// 1-based offset of the winning subset.
    pub offset: usize,
    /// Coarse-weighted error of the winner, `sum_{j in S} (k gamma_j) e_j`.
    pub subset_error: f64,
    /// Full-grid weighted error `sum_j gamma_j e_j`.
    pub total_error: f64,
    /// Pigeonhole inequality `subset_error <= total_error` (up to a 1e-12
    /// relative float-summation allowance).
    pub bound_ok: bool,
}

/// Pick the stride-`k` subset with the smallest coarse-weighted error.
///
/// The winning subset always satisfies `min_i sum_{S_i} k gamma e <=
/// sum_j gamma e`: the k subset sums average to the total.
pub fn best_subset(errors: &[f64], gammas: &[f64], k: usize) -> Result<BestSubset> {
    let n = errors.len();
    if n == 0 || gammas.len() != n {
        return Err(Error::InvalidArgument("errors/gammas must be non-empty and equal".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= N (k={k}, N={n})")));
    }
    if errors.iter().any(|&e| e < 0.0 || !e.is_finite()) {
        return Err(Error::InvalidArgument("errors must be finite and nonnegative".into()));
    }
    let mut subset_sums = vec![0.0f64; k];
    let mut total = 0.0f64;
    for j in 0..n {
        let w = gammas[j] * errors[j];
        subset_sums[j % k] += k as f64 * w;
        total += w;
    }
    let (best, &best_sum) = subset_sums
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let bound_ok = best_sum <= total * (1.0 + 1e-12) + 1e-300;
    Ok(BestSubset { offset: best + 1, subset_error: best_sum, total_error: total, bound_ok })
}
