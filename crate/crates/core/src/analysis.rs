//! Metrics and exact-identity verifiers.
//!
//! Everything here measures a learned (or deliberately perturbed) score
//! against the closed-form oracle: weighted L2 errors, the two-path
//! martingale-ledger identity, the excess-risk inequality, moment-ratio
//! (hypercontractivity) estimates, local time-regularity violation rates,
//! and the bootstrap-vs-plain residual variance rates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::NoisedDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, StreamDomain};
use crate::sample::SampleSet;
use crate::schedule::{sigma_sq, Schedule};
use crate::targets::{sample_marginal_with, sample_target_with, ScoreOracle};
use crate::train::{alpha, AlphaMode};
use crate::ScoreFn;

/// One grid row of an [`ErrorReport`].
#[derive(Debug, Clone, Serialize)]
pub struct TimestepError {
    pub t: f64,
    pub gamma: f64,
    /// Mean squared score error at `t` (unweighted).
    pub value: f64,
    /// Monte-Carlo standard error when the row is an MC estimate.
    pub std_err: Option<f64>,
}

/// Per-timestep squared score errors with their gamma-weighted total.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub per_timestep: Vec<TimestepError>,
    /// `sum_j gamma_j e_j`.
    pub total: f64,
    pub total_std_err: Option<f64>,
}

impl ErrorReport {
    fn from_rows(per_timestep: Vec<TimestepError>) -> Self {
        let total = per_timestep.iter().map(|r| r.gamma * r.value).sum();
        let total_std_err = if per_timestep.iter().all(|r| r.std_err.is_some()) {
            Some(
                per_timestep
                    .iter()
                    .map(|r| (r.gamma * r.std_err.unwrap()).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            )
        } else {
            None
        };
        ErrorReport { per_timestep, total, total_std_err }
    }

    /// Re-derive the total from the rows (the stored value must match to
    /// 1e-12 relative; used by tests and the CLI self-checks).
    pub fn recompute_total(&self) -> f64 {
        self.per_timestep.iter().map(|r| r.gamma * r.value).sum()
    }

    pub fn values(&self) -> Vec<f64> {
        self.per_timestep.iter().map(|r| r.value).collect()
    }
}

/// Empirical weighted L2 error of `model` against the oracle over the
/// dataset: rows are `(1/m) sum_i ||f - s||^2` at each `t_j`, the total is
/// gamma-weighted.
pub fn empirical_l2(
    model: &dyn ScoreFn,
    oracle: &ScoreOracle,
    dataset: &NoisedDataset,
) -> Result<ErrorReport> {
    let (m, n, d) = (dataset.m(), dataset.n_steps(), dataset.dim());
    let mut rows = Vec::with_capacity(n);
    let mut fx = vec![0.0; d];
    let mut sx = vec![0.0; d];
    for j in 0..n {
        let t = dataset.schedule().time(j);
        let at = oracle.at(t)?;
        let mut acc = 0.0;
        for i in 0..m {
            let x = dataset.state(i, j);
            model.eval_into(t, x, &mut fx)?;
            at.score_into(x, &mut sx);
            acc += fx.iter().zip(&sx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        rows.push(TimestepError {
            t,
            gamma: dataset.schedule().weight(j),
            value: acc / m as f64,
            std_err: None,
        });
    }
    Ok(ErrorReport::from_rows(rows))
}

/// Expected weighted L2 error estimated on fresh marginal draws
/// (`n_mc` per timestep, stream `McDraws/j`), with standard errors.
pub fn expected_l2(
    model: &dyn ScoreFn,
    oracle: &ScoreOracle,
    schedule: &Schedule,
    n_mc: usize,
    seed: u64,
) -> Result<ErrorReport> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be positive".into()));
    }
    let d = oracle.dim();
    let mut rows = Vec::with_capacity(schedule.len());
    let mut fx = vec![0.0; d];
    let mut sx = vec![0.0; d];
    for j in 0..schedule.len() {
        let t = schedule.time(j);
        let mut rng = stream(seed, StreamDomain::McDraws, j as u64);
        let xs = sample_marginal_with(oracle.target(), t, n_mc, &mut rng)?;
        let at = oracle.at(t)?;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n_mc {
            let x = &xs[i * d..(i + 1) * d];
            model.eval_into(t, x, &mut fx)?;
            at.score_into(x, &mut sx);
            let q: f64 = fx.iter().zip(&sx).map(|(a, b)| (a - b) * (a - b)).sum();
            s1 += q;
            s2 += q * q;
        }
        let mean = s1 / n_mc as f64;
        let var = (s2 / n_mc as f64 - mean * mean).max(0.0);
        rows.push(TimestepError {
            t,
            gamma: schedule.weight(j),
            value: mean,
            std_err: Some((var / n_mc as f64).sqrt()),
        });
    }
    Ok(ErrorReport::from_rows(rows))
}

/// The martingale ledger: the excess-risk cross term computed two ways.
///
/// `h_direct` is the per-sample inner-product form
/// `sum_{i,j} (gamma_j/m) <f - s, -z/sigma^2 - s>`; `h_decomposed` is the
/// telescoped sum of martingale differences built from posterior means.
/// The two must agree to float accumulation error for any model.
#[derive(Debug, Clone)]
pub struct MartingaleLedger {
    m: usize,
    n: usize,
    d: usize,
    /// `zeta[i][j] = (s - f)(t_j, x_j^{(i)}) / m`, flat `m x N x d`.
    zeta: Vec<f64>,
    /// `G_{i,k}` for 1-based `k`, flat `m x N x d` (column `k-1`).
    g: Vec<f64>,
    /// `Gbar_i`, flat `m x d`.
    gbar: Vec<f64>,
    /// Martingale differences `R_{i,k}` for 1-based `k`, flat `m x N`.
    r: Vec<f64>,
    pub h_direct: f64,
    pub h_decomposed: f64,
}

impl MartingaleLedger {
    /// `(m, N, d)` of the underlying dataset.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.n, self.d)
    }

    pub fn relative_gap(&self) -> f64 {
        (self.h_direct - self.h_decomposed).abs() / (self.h_direct.abs() + 1e-12)
    }

    /// `R_{i,k}` with 1-based `k` as in the decomposition.
    pub fn r(&self, i: usize, k: usize) -> f64 {
        self.r[i * self.n + (k - 1)]
    }

    /// `G_{i,k}` with 1-based `k` (`G_{i,1}` is the empty sum).
    pub fn g(&self, i: usize, k: usize) -> &[f64] {
        let base = (i * self.n + (k - 1)) * self.d;
        &self.g[base..base + self.d]
    }

    pub fn gbar(&self, i: usize) -> &[f64] {
        &self.gbar[i * self.d..(i + 1) * self.d]
    }

    pub fn zeta(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.n + j) * self.d;
        &self.zeta[base..base + self.d]
    }

    pub fn sum_r(&self) -> f64 {
        self.r.iter().sum()
    }
}

/// Direct evaluation of the cross term `H^f`.
fn h_direct(model: &dyn ScoreFn, oracle: &ScoreOracle, dataset: &NoisedDataset) -> Result<f64> {
    let (m, n, d) = (dataset.m(), dataset.n_steps(), dataset.dim());
    let mut fx = vec![0.0; d];
    let mut sx = vec![0.0; d];
    let mut h = 0.0;
    for j in 0..n {
        let t = dataset.schedule().time(j);
        let gamma = dataset.schedule().weight(j);
        let inv_s2 = 1.0 / dataset.schedule().sigma_sq(j);
        let at = oracle.at(t)?;
        let mut acc = 0.0;
        for i in 0..m {
            let x = dataset.state(i, j);
            model.eval_into(t, x, &mut fx)?;
            at.score_into(x, &mut sx);
            let z = dataset.noise(i, j);
            for c in 0..d {
                acc += (fx[c] - sx[c]) * (-z[c] * inv_s2 - sx[c]);
            }
        }
        h += gamma * acc / m as f64;
    }
    Ok(h)
}

/// Build the full ledger: `zeta`, the predictable prefixes `G`/`Gbar`, the
/// martingale differences `R_{i,k}`, and both evaluations of `H^f`.
pub fn martingale_decompose(
    dataset: &NoisedDataset,
    model: &dyn ScoreFn,
    oracle: &ScoreOracle,
) -> Result<MartingaleLedger> {
    let (m, n, d) = (dataset.m(), dataset.n_steps(), dataset.dim());
    let sched = dataset.schedule();
    let times = sched.times();
    let t1 = times[0];

    // Per-timestep constants.
    let mut w_abs = Vec::with_capacity(n); // gamma_j e^{-t_j} / sigma_j^2
    let mut w_rel = Vec::with_capacity(n); // gamma_j e^{-(t_j - t_1)} / sigma_j^2
    for j in 0..n {
        let g = sched.weight(j);
        let s2 = sched.sigma_sq(j);
        w_abs.push(g * (-times[j]).exp() / s2);
        w_rel.push(g * (-(times[j] - t1)).exp() / s2);
    }
    let s2_first = sched.sigma_sq(0);

    let mut zeta = vec![0.0; m * n * d];
    let mut g_buf = vec![0.0; m * n * d];
    let mut gbar = vec![0.0; m * d];
    let mut r = vec![0.0; m * n];

    let mut fx = vec![0.0; d];
    let inv_m = 1.0 / m as f64;
    for i in 0..m {
        // zeta and Gbar.
        for j in 0..n {
            let x = dataset.state(i, j);
            model.eval_into(times[j], x, &mut fx)?;
            let s = oracle.score(times[j], x)?;
            let zrow = &mut zeta[(i * n + j) * d..(i * n + j + 1) * d];
            for c in 0..d {
                zrow[c] = (s[c] - fx[c]) * inv_m;
                gbar[i * d + c] += w_rel[j] * zrow[c];
            }
        }
        // Suffix sums: suf[r] = sum_{j >= r} w_abs[j] zeta[i][j];
        // G_{i,k} (1-based k) = suf[n - k + 1], with suf[n] = 0.
        let mut suf = vec![0.0; (n + 1) * d];
        for j in (0..n).rev() {
            for c in 0..d {
                suf[j * d + c] =
                    suf[(j + 1) * d + c] + w_abs[j] * zeta[(i * n + j) * d + c];
            }
        }
        for k in 1..=n {
            let src = (n - k + 1) * d;
            g_buf[(i * n + (k - 1)) * d..(i * n + k) * d]
                .copy_from_slice(&suf[src..src + d]);
        }
        // Posterior means along the trajectory.
        let mut pm = Vec::with_capacity(n);
        for j in 0..n {
            pm.push(oracle.posterior_mean_x0(times[j], dataset.state(i, j))?);
        }
        // R_{i,k} for k in [1, N-1]: <G_{i,k+1}, pm[N-k] - pm[N-k-1]> in
        // 0-based pm indices.
        for k in 1..n {
            let gk1 = &suf[(n - k) * d..(n - k + 1) * d];
            let hi = &pm[n - k];
            let lo = &pm[n - k - 1];
            let mut dot = 0.0;
            for c in 0..d {
                dot += gk1[c] * (hi[c] - lo[c]);
            }
            r[i * n + (k - 1)] = dot;
        }
        // R_{i,N}: <Gbar_i, z_1 - E[z_1 | x_1]> with E[z|x] = -sigma^2 s.
        let s_first = oracle.score(t1, dataset.state(i, 0))?;
        let z_first = dataset.noise(i, 0);
        let mut dot = 0.0;
        for c in 0..d {
            dot += gbar[i * d + c] * (z_first[c] + s2_first * s_first[c]);
        }
        r[i * n + (n - 1)] = dot;
    }

    let h_dec: f64 = r.iter().sum();
    let h_dir = h_direct(model, oracle, dataset)?;
    Ok(MartingaleLedger {
        m,
        n,
        d,
        zeta,
        g: g_buf,
        gbar,
        r,
        h_direct: h_dir,
        h_decomposed: h_dec,
    })
}

/// Outcome of the excess-risk inequality check over a model pool.
#[derive(Debug, Clone, Serialize)]
pub struct ExcessRiskReport {
    /// Index of the empirical-loss minimizer in the pool.
    pub selected: usize,
    /// Empirical joint-DSM loss of every pool member.
    pub empirical_losses: Vec<f64>,
    /// `L(f_hat)`: gamma-weighted squared error to the oracle.
    pub l_value: f64,
    /// `H^{f_hat}`: the cross term.
    pub h_value: f64,
    /// `L <= H` (None when the oracle was not in the pool: the bound is
    /// only guaranteed when the true score is available to the minimizer).
    pub holds: Option<bool>,
    pub skipped_reason: Option<String>,
}

/// Select the empirical risk minimizer from `pool` and compare `L(f_hat)`
/// against `H^{f_hat}`.
pub fn excess_risk_check(
    dataset: &NoisedDataset,
    pool: &[&dyn ScoreFn],
    oracle_index: Option<usize>,
    oracle: &ScoreOracle,
) -> Result<ExcessRiskReport> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty model pool".into()));
    }
    let mut losses = Vec::with_capacity(pool.len());
    for f in pool {
        losses.push(crate::train::dsm_total_loss(*f, dataset)?);
    }
    let selected = losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let l_value = empirical_l2(pool[selected], oracle, dataset)?.total;
    let h_value = h_direct(pool[selected], oracle, dataset)?;
    let (holds, skipped_reason) = match oracle_index {
        Some(_) => (Some(l_value <= h_value + 1e-12), None),
        None => (
            None,
            Some("oracle not in pool: L <= H is not guaranteed, check skipped".to_string()),
        ),
    };
    Ok(ExcessRiskReport { selected, empirical_losses: losses, l_value, h_value, holds, skipped_reason })
}

/// Moment-ratio (hypercontractivity) estimate
/// `E[||f-s||^4]^{1/4} / E[||f-s||^2]^{1/2}` at time `t` on fresh draws.
///
/// Always at least 1 by the power-mean inequality; errors if the second
/// moment vanishes (model equal to the oracle).
pub fn kappa_estimate(
    model: &dyn ScoreFn,
    oracle: &ScoreOracle,
    t: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be positive".into()));
    }
    let d = oracle.dim();
    let mut rng = stream(seed, StreamDomain::McDraws, 0);
    let xs = sample_marginal_with(oracle.target(), t, n_mc, &mut rng)?;
    let at = oracle.at(t)?;
    let mut fx = vec![0.0; d];
    let mut sx = vec![0.0; d];
    let (mut m2, mut m4) = (0.0, 0.0);
    for i in 0..n_mc {
        let x = &xs[i * d..(i + 1) * d];
        model.eval_into(t, x, &mut fx)?;
        at.score_into(x, &mut sx);
        let q: f64 = fx.iter().zip(&sx).map(|(a, b)| (a - b) * (a - b)).sum();
        m2 += q;
        m4 += q * q;
    }
    m2 /= n_mc as f64;
    m4 /= n_mc as f64;
    if m2 <= 0.0 || m4 == 0.0 {
        return Err(Error::UndefinedRatio(
            "second moment of the score error vanishes; kappa is 0/0".into(),
        ));
    }
    let kappa = m4.powf(0.25) / m2.sqrt();
    debug_assert!(kappa >= 1.0 - 1e-9, "power-mean inequality violated: {kappa}");
    Ok(kappa)
}

/// Fraction of `x ~ p_t` draws violating the local time-regularity bound
/// `||e^{-D} f(t, x) - f(t', e^{D} x)|| <= e^{D} L sqrt(8 d D log(2/tail))`
/// with `D = t - t_prev`. For the true score this fraction is at most
/// `tail` (up to MC noise).
pub fn time_regularity_check(
    f: &dyn ScoreFn,
    oracle: &ScoreOracle,
    t: f64,
    t_prev: f64,
    lipschitz: f64,
    tail: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if t_prev > t || t_prev < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= t_prev <= t, got t_prev={t_prev}, t={t}"
        )));
    }
    if !(0.0 < tail && tail < 1.0) {
        return Err(Error::InvalidArgument("tail probability must be in (0,1)".into()));
    }
    let d = oracle.dim();
    let gap = t - t_prev;
    let bound =
        gap.exp() * lipschitz * (8.0 * d as f64 * gap * (2.0 / tail).ln()).sqrt();
    let mut rng = stream(seed, StreamDomain::McDraws, 1);
    let xs = sample_marginal_with(oracle.target(), t, n_mc, &mut rng)?;
    let shrink = (-gap).exp();
    let grow = gap.exp();
    let mut f_hi = vec![0.0; d];
    let mut f_lo = vec![0.0; d];
    let mut scaled = vec![0.0; d];
    let mut violations = 0usize;
    for i in 0..n_mc {
        let x = &xs[i * d..(i + 1) * d];
        f.eval_into(t, x, &mut f_hi)?;
        for c in 0..d {
            scaled[c] = grow * x[c];
        }
        f.eval_into(t_prev, &scaled, &mut f_lo)?;
        let lhs: f64 = (0..d)
            .map(|c| (shrink * f_hi[c] - f_lo[c]).powi(2))
            .sum::<f64>()
            .sqrt();
        if lhs > bound {
            violations += 1;
        }
    }
    Ok(violations as f64 / n_mc as f64)
}

/// One row of the residual-variance sweep.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceRateRow {
    pub delta: f64,
    /// Trace covariance of the bootstrapped residual (oracle previous score).
    pub bsm_tr_cov: f64,
    pub bsm_se: f64,
    /// Trace covariance of the plain DSM residual at the same `t`.
    pub dsm_tr_cov: f64,
    pub dsm_se: f64,
    /// max_c |mean r~_c| / SE(mean r~_c): the unbiasedness statistic.
    pub bsm_max_mean_over_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceSweep {
    pub rows: Vec<VarianceRateRow>,
    /// log-log slope of the bootstrapped residual trace-covariance vs delta
    /// (needs at least two deltas).
    pub bsm_slope: Option<f64>,
    /// Same for the plain DSM residual (should hug 0).
    pub dsm_slope: Option<f64>,
}

/// Measure bootstrap and plain residual variances at fixed `t` across lags.
///
/// For each `delta` the previous time is `t' = t - delta`; the previous
/// score is the oracle, so the bootstrapped target is exactly unbiased and
/// its conditional variance carries the extra `delta` factor.
pub fn variance_rate_sweep(
    oracle: &ScoreOracle,
    t: f64,
    deltas: &[f64],
    n_mc: usize,
    seed: u64,
    mode: AlphaMode,
) -> Result<VarianceSweep> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("need at least one delta".into()));
    }
    if deltas.iter().any(|&dl| !(dl > 0.0) || dl >= t) {
        return Err(Error::InvalidArgument("every delta must satisfy 0 < delta < t".into()));
    }
    let d = oracle.dim();
    let s2_t = sigma_sq(t);
    let mut rows = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let t_prev = t - delta;
        let a = alpha(t_prev, t, mode)?;
        let s2_prev = sigma_sq(t_prev);
        let s_gap = sigma_sq(delta).sqrt();
        let decay_prev = (-t_prev).exp();
        let decay_gap = (-delta).exp();
        let decay_t = (-t).exp();
        let at_t = oracle.at(t)?;
        let at_prev = oracle.at(t_prev)?;
        let mut rng = stream(seed, StreamDomain::McDraws, 100 + di as u64);
        let x0s = sample_target_with(oracle.target(), n_mc, &mut rng)?;

        let mut s_t = vec![0.0; d];
        let mut s_prev = vec![0.0; d];
        let mut x_prev = vec![0.0; d];
        let mut x_t = vec![0.0; d];
        let mut bsm_sum = vec![0.0; d];
        let mut bsm_sumsq = vec![0.0; d];
        let (mut bsm_q1, mut bsm_q2) = (0.0, 0.0);
        let (mut dsm_q1, mut dsm_q2) = (0.0, 0.0);
        let mut dsm_sum = vec![0.0; d];
        for i in 0..n_mc {
            let x0 = &x0s[i * d..(i + 1) * d];
            for c in 0..d {
                let xi: f64 = rng.sample(StandardNormal);
                x_prev[c] = decay_prev * x0[c] + s2_prev.sqrt() * xi;
            }
            for c in 0..d {
                let xi: f64 = rng.sample(StandardNormal);
                x_t[c] = decay_gap * x_prev[c] + s_gap * xi;
            }
            at_t.score_into(&x_t, &mut s_t);
            at_prev.score_into(&x_prev, &mut s_prev);
            let (mut qb, mut qd) = (0.0, 0.0);
            for c in 0..d {
                let z_t = x_t[c] - decay_t * x0[c];
                let z_prev = x_prev[c] - decay_prev * x0[c];
                let dsm_res = -z_t / s2_t - s_t[c];
                let bsm_res = dsm_res + a * (s_prev[c] + z_prev / s2_prev);
                bsm_sum[c] += bsm_res;
                bsm_sumsq[c] += bsm_res * bsm_res;
                dsm_sum[c] += dsm_res;
                qb += bsm_res * bsm_res;
                qd += dsm_res * dsm_res;
            }
            bsm_q1 += qb;
            bsm_q2 += qb * qb;
            dsm_q1 += qd;
            dsm_q2 += qd * qd;
        }
        let nf = n_mc as f64;
        let bsm_mean_sq: f64 = bsm_sum.iter().map(|s| (s / nf) * (s / nf)).sum();
        let dsm_mean_sq: f64 = dsm_sum.iter().map(|s| (s / nf) * (s / nf)).sum();
        let bsm_tr = bsm_q1 / nf - bsm_mean_sq;
        let dsm_tr = dsm_q1 / nf - dsm_mean_sq;
        let bsm_se = (((bsm_q2 / nf) - (bsm_q1 / nf).powi(2)).max(0.0) / nf).sqrt();
        let dsm_se = (((dsm_q2 / nf) - (dsm_q1 / nf).powi(2)).max(0.0) / nf).sqrt();
        let mut worst = 0.0f64;
        for c in 0..d {
            let mean = bsm_sum[c] / nf;
            let var = (bsm_sumsq[c] / nf - mean * mean).max(1e-300);
            worst = worst.max(mean.abs() / (var / nf).sqrt());
        }
        rows.push(VarianceRateRow {
            delta,
            bsm_tr_cov: bsm_tr,
            bsm_se,
            dsm_tr_cov: dsm_tr,
            dsm_se,
            bsm_max_mean_over_se: worst,
        });
    }
    let (bsm_slope, dsm_slope) = if deltas.len() >= 2 {
        (
            Some(loglog_slope(deltas, &rows.iter().map(|r| r.bsm_tr_cov).collect::<Vec<_>>())?),
            Some(loglog_slope(deltas, &rows.iter().map(|r| r.dsm_tr_cov).collect::<Vec<_>>())?),
        )
    } else {
        (None, None)
    };
    Ok(VarianceSweep { rows, bsm_slope, dsm_slope })
}

/// One bin of the conditional-noise-covariance check.
#[derive(Debug, Clone, Serialize)]
pub struct BinCheck {
    pub center: f64,
    pub count: usize,
    /// Mean of `z_gap^2 - predicted(x_t)` inside the bin.
    pub mean_gap: f64,
    /// Standard error of that mean.
    pub std_err: f64,
}

impl BinCheck {
    /// Within `k` standard errors of the tower-property prediction.
    pub fn within(&self, k: f64) -> bool {
        self.mean_gap.abs() <= k * self.std_err
    }
}

/// Second-order Tweedie check (1-D targets): inside a bin around each
/// center, the sample mean of `z_{t,t'}^2` must match the closed form
/// `sigma_D^4 (h_t + s^2) + sigma_D^2` averaged over the same draws.
/// Comparing per-draw predictions keeps the identity exact under binning
/// (tower property), so the gap is pure MC noise.
pub fn conditional_noise_bin_check(
    oracle: &ScoreOracle,
    t: f64,
    t_prev: f64,
    n_mc: usize,
    seed: u64,
    centers: &[f64],
    half_width: f64,
) -> Result<Vec<BinCheck>> {
    if oracle.dim() != 1 {
        return Err(Error::InvalidArgument("bin check is implemented for d = 1".into()));
    }
    if !(t_prev >= 0.0) || t_prev >= t {
        return Err(Error::InvalidArgument("need 0 <= t_prev < t".into()));
    }
    let delta = t - t_prev;
    let s2_gap = sigma_sq(delta);
    let s4_gap = s2_gap * s2_gap;
    let decay_prev = (-t_prev).exp();
    let decay_gap = (-delta).exp();
    let s_prev_sd = sigma_sq(t_prev).sqrt();
    let at_t = oracle.at(t)?;
    let mut rng = stream(seed, StreamDomain::McDraws, 2);
    let x0s = sample_target_with(oracle.target(), n_mc, &mut rng)?;

    let mut sums = vec![(0usize, 0.0f64, 0.0f64); centers.len()];
    let mut s_buf = [0.0f64];
    for &x0 in &x0s {
        let xi1: f64 = rng.sample(StandardNormal);
        let x_prev = decay_prev * x0 + s_prev_sd * xi1;
        let xi2: f64 = rng.sample(StandardNormal);
        let z_gap = s2_gap.sqrt() * xi2;
        let x_t = decay_gap * x_prev + z_gap;
        for (b, &c) in centers.iter().enumerate() {
            if (x_t - c).abs() <= half_width {
                at_t.score_into(&[x_t], &mut s_buf);
                let h = at_t.hessian(&[x_t])[(0, 0)];
                let predicted = s4_gap * (h + s_buf[0] * s_buf[0]) + s2_gap;
                let g = z_gap * z_gap - predicted;
                sums[b].0 += 1;
                sums[b].1 += g;
                sums[b].2 += g * g;
            }
        }
    }
    Ok(centers
        .iter()
        .zip(sums)
        .map(|(&center, (count, s1, s2))| {
            let n = count.max(1) as f64;
            let mean = s1 / n;
            let var = (s2 / n - mean * mean).max(0.0);
            BinCheck { center, count, mean_gap: mean, std_err: (var / n).sqrt() }
        })
        .collect())
}

/// Least-squares slope of `log y` on `log x`; inputs must be positive.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("need two or more (x, y) pairs".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("log-log slope needs positive inputs".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }
    Ok(num / den)
}

/// Nearest-mean assignment fractions of `samples` across `means`.
pub fn mode_weights(samples: &SampleSet, means: &[Vec<f64>]) -> Result<Vec<f64>> {
    if means.is_empty() {
        return Err(Error::InvalidArgument("need at least one mean".into()));
    }
    if means.iter().any(|m| m.len() != samples.d) {
        return Err(Error::InvalidArgument("mean dimension mismatch".into()));
    }
    let mut counts = vec![0usize; means.len()];
    for i in 0..samples.len() {
        let x = samples.row(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, mean) in means.iter().enumerate() {
            let dist: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best_d = dist;
                best = k;
            }
        }
        counts[best] += 1;
    }
    let n = samples.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}
