//! Target distributions with closed-form noised scores.
//!
//! The forward process `dx_t = -x_t dt + sqrt(2) dB_t` maps `x_0 ~ pi` to
//! `x_t = e^{-t} x_0 + z_t`, `z_t ~ N(0, sigma_t^2 I)`. For the two target
//! families here the noised density `p_t` stays in closed form:
//!
//! * Gaussian `N(0, Sigma)`: `p_t = N(0, Sigma_t)` with
//!   `Sigma_t = e^{-2t} Sigma + sigma_t^2 I`, score `-Sigma_t^{-1} x`,
//!   log-density Hessian `-Sigma_t^{-1}`.
//! * Isotropic Gaussian mixture: component means scale by `e^{-t}`,
//!   component variances become `e^{-2t} v_i + sigma_t^2`; score and
//!   Hessian follow from log-space responsibilities.
//!
//! On top of the score the oracle exposes the conditional moments that the
//! identity checks need: the posterior mean `E[x_0 | x_t] = e^t (x_t +
//! sigma_t^2 s(t, x_t))` and the conditional noise covariance
//! `E[z z^T | x_t] = sigma_D^4 (h_t + s s^T) + sigma_D^2 I` over a lag `D`.
//!
//! Oracles are immutable after construction and safe to share across
//! threads; per-`t` Gaussian factorizations are precomputed for a
//! schedule's grid and recomputed on the fly elsewhere.

use std::borrow::Cow;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{stream, StreamDomain};
use crate::schedule::{sigma_sq, Schedule};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Validated target distribution `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTargetSpec", into = "RawTargetSpec")]
pub enum TargetSpec {
    /// Centered Gaussian with SPD covariance.
    Gaussian { sigma: DMatrix<f64> },
    /// Mixture of isotropic Gaussians (per-component scalar variance).
    Gmm { means: Vec<DVector<f64>>, variances: Vec<f64>, weights: Vec<f64> },
}

/// JSON wire form: `{"kind":"gaussian","sigma":[[..]]}` or
/// `{"kind":"gmm","means":[[..]],"variances":[..],"weights":[..]}`.
#[derive(Serialize, Deserialize, Clone)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawTargetSpec {
    Gaussian { sigma: Vec<Vec<f64>> },
    Gmm { means: Vec<Vec<f64>>, variances: Vec<f64>, weights: Vec<f64> },
}

impl TryFrom<RawTargetSpec> for TargetSpec {
    type Error = Error;
    fn try_from(raw: RawTargetSpec) -> Result<Self> {
        match raw {
            RawTargetSpec::Gaussian { sigma } => {
                let d = sigma.len();
                if d == 0 || sigma.iter().any(|row| row.len() != d) {
                    return Err(Error::InvalidTarget("covariance must be square and non-empty".into()));
                }
                let m = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
                TargetSpec::gaussian(m)
            }
            RawTargetSpec::Gmm { means, variances, weights } => TargetSpec::gmm(
                means.into_iter().map(DVector::from_vec).collect(),
                variances,
                weights,
            ),
        }
    }
}

impl From<TargetSpec> for RawTargetSpec {
    fn from(t: TargetSpec) -> Self {
        match t {
            TargetSpec::Gaussian { sigma } => RawTargetSpec::Gaussian {
                sigma: (0..sigma.nrows())
                    .map(|i| (0..sigma.ncols()).map(|j| sigma[(i, j)]).collect())
                    .collect(),
            },
            TargetSpec::Gmm { means, variances, weights } => RawTargetSpec::Gmm {
                means: means.into_iter().map(|m| m.as_slice().to_vec()).collect(),
                variances,
                weights,
            },
        }
    }
}

impl TargetSpec {
    /// Gaussian target; rejects asymmetric or non-SPD covariances.
    pub fn gaussian(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.is_empty() {
            return Err(Error::InvalidTarget("covariance must be square and non-empty".into()));
        }
        let scale = sigma.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
        for i in 0..sigma.nrows() {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidTarget(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        linalg::spd_cholesky(&sigma, "target covariance")?;
        Ok(TargetSpec::Gaussian { sigma })
    }

    /// Isotropic-component mixture; weights must be strictly positive and
    /// sum to 1 within 1e-12, variances nonnegative.
    pub fn gmm(means: Vec<DVector<f64>>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidTarget("mixture needs at least one component".into()));
        }
        if means.len() != variances.len() || means.len() != weights.len() {
            return Err(Error::InvalidTarget(
                "means/variances/weights must have equal length".into(),
            ));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidTarget("component means must share a nonzero dimension".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidTarget("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTarget(format!(
                "weights must sum to 1 within 1e-12 (got {total})"
            )));
        }
        if variances.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidTarget("variances must be finite and >= 0".into()));
        }
        Ok(TargetSpec::Gmm { means, variances, weights })
    }

    /// 1-D convenience used throughout tests and presets.
    pub fn gmm_1d(means: &[f64], variances: &[f64], weights: &[f64]) -> Result<Self> {
        Self::gmm(
            means.iter().map(|&m| DVector::from_vec(vec![m])).collect(),
            variances.to_vec(),
            weights.to_vec(),
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Gaussian { sigma } => sigma.nrows(),
            TargetSpec::Gmm { means, .. } => means[0].len(),
        }
    }
}

/// Draw `m` i.i.d. samples from `pi` into a flat row-major `m x d` buffer.
///
/// Deterministic given `seed`; draws come from
/// `stream(seed, TargetSampling, 0)` in sample-major order.
pub fn sample_target(target: &TargetSpec, m: usize, seed: u64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = stream(seed, StreamDomain::TargetSampling, 0);
    sample_target_with(target, m, &mut rng)
}

/// As [`sample_target`] but drawing from a caller-managed stream.
pub fn sample_target_with(
    target: &TargetSpec,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = target.dim();
    let mut out = vec![0.0; m * d];
    match target {
        TargetSpec::Gaussian { sigma } => {
            let chol = linalg::spd_cholesky(sigma, "target covariance")?;
            let l = chol.l();
            let mut z = DVector::zeros(d);
            for i in 0..m {
                for c in 0..d {
                    z[c] = rng.sample(StandardNormal);
                }
                let x = &l * &z;
                out[i * d..(i + 1) * d].copy_from_slice(x.as_slice());
            }
        }
        TargetSpec::Gmm { means, variances, weights } => {
            for i in 0..m {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut comp = weights.len() - 1;
                for (k, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        comp = k;
                        break;
                    }
                }
                let sd = variances[comp].sqrt();
                let row = &mut out[i * d..(i + 1) * d];
                for (c, o) in row.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = means[comp][c] + sd * z;
                }
            }
        }
    }
    Ok(out)
}

/// Draw `n` fresh samples of the noised marginal `p_t` (flat `n x d`),
/// via `x_t = e^{-t} x_0 + sigma_t xi`.
pub fn sample_marginal_with(
    target: &TargetSpec,
    t: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = target.dim();
    let decay = (-t).exp();
    let sd = sigma_sq(t).sqrt();
    let mut x = sample_target_with(target, n, rng)?;
    for v in x.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = decay * *v + sd * z;
    }
    debug_assert_eq!(x.len(), n * d);
    Ok(x)
}

/// Per-`t` Gaussian factorization shared by every oracle query at that time.
#[derive(Debug, Clone)]
pub struct GaussFactor {
    inv: DMatrix<f64>,
    log_det: f64,
    /// Operator norm of `Sigma_t^{-1}`: the exact Lipschitz constant of the
    /// score map at this `t`.
    lipschitz: f64,
}

impl GaussFactor {
    fn build(sigma: &DMatrix<f64>, t: f64) -> Result<Self> {
        let d = sigma.nrows();
        let decay2 = (-2.0 * t).exp();
        let s2 = sigma_sq(t);
        let mut sigma_t = sigma * decay2;
        for i in 0..d {
            sigma_t[(i, i)] += s2;
        }
        let chol = linalg::spd_cholesky(&sigma_t, "noised covariance")?;
        let log_det = 2.0 * (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
        let inv = chol.inverse();
        let lipschitz = linalg::sym_opnorm(&inv);
        Ok(GaussFactor { inv, log_det, lipschitz })
    }
}

/// Exact score/Hessian/moment oracle for a [`TargetSpec`].
#[derive(Debug, Clone)]
pub struct ScoreOracle {
    target: TargetSpec,
    d: usize,
    gauss_cache: HashMap<u64, GaussFactor>,
}

/// Resolved per-`t` view of the oracle; hoist out of sample loops.
pub enum OracleAt<'a> {
    Gauss { d: usize, fac: Cow<'a, GaussFactor>, t: f64 },
    Gmm { d: usize, means: Vec<f64>, vars: Vec<f64>, log_w: Vec<f64>, t: f64 },
}


impl ScoreOracle {
    /// Oracle with no precomputed grid; per-`t` quantities are derived on
    /// demand (each call is self-contained, keeping the oracle immutable).
    pub fn new(target: TargetSpec) -> Self {
        let d = target.dim();
        ScoreOracle { target, d, gauss_cache: HashMap::new() }
    }

    /// Oracle with Gaussian factorizations precomputed at the schedule grid.
    pub fn with_schedule(target: TargetSpec, schedule: &Schedule) -> Result<Self> {
        let mut oracle = ScoreOracle::new(target);
        if let TargetSpec::Gaussian { sigma } = &oracle.target {
            for &t in schedule.times() {
                oracle
                    .gauss_cache
                    .insert(t.to_bits(), GaussFactor::build(sigma, t)?);
            }
        }
        Ok(oracle)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn target(&self) -> &TargetSpec {
        self.target_ref()
    }

    fn target_ref(&self) -> &TargetSpec {
        &self.target
    }

    /// Resolve the per-`t` evaluator. For Gaussian targets this is a cache
    /// hit at schedule times and a fresh SPD factorization otherwise.
    pub fn at(&self, t: f64) -> Result<OracleAt<'_>> {
        if t < 0.0 {
            return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
        }
        match &self.target {
            TargetSpec::Gaussian { sigma } => {
                let fac = match self.gauss_cache.get(&t.to_bits()) {
                    Some(hit) => Cow::Borrowed(hit),
                    None => Cow::Owned(GaussFactor::build(sigma, t)?),
                };
                Ok(OracleAt::Gauss { d: self.d, fac, t })
            }
            TargetSpec::Gmm { means, variances, weights } => {
                let s2 = sigma_sq(t);
                let decay = (-t).exp();
                let mut vars = Vec::with_capacity(variances.len());
                for &v in variances {
                    let noised = decay * decay * v + s2;
                    if noised <= 0.0 {
                        return Err(Error::DegenerateEvaluation(format!(
                            "mixture component is a point mass at t = {t}; the score does not exist"
                        )));
                    }
                    vars.push(noised);
                }
                let mut flat_means = Vec::with_capacity(means.len() * self.d);
                for m in means {
                    for c in 0..self.d {
                        flat_means.push(decay * m[c]);
                    }
                }
                let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
                Ok(OracleAt::Gmm { d: self.d, means: flat_means, vars, log_w, t })
            }
        }
    }

    /// Score `s(t, x) = grad log p_t(x)`.
    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.at(t)?.score_into(x, &mut out);
        Ok(out)
    }

    /// Hessian `h_t(x) = grad^2 log p_t(x)`.
    pub fn hessian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.at(t)?.hessian(x))
    }

    /// `log p_t(x)`; the finite-difference cross-checks differentiate this.
    pub fn log_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.at(t)?.log_density(x))
    }

    /// Posterior mean `E[x_0 | x_t] = e^t (x_t + sigma_t^2 s(t, x_t))`;
    /// at `t = 0` this is `x_t` itself.
    pub fn posterior_mean_x0(&self, t: f64, x_t: &[f64]) -> Result<Vec<f64>> {
        if t == 0.0 {
            return Ok(x_t.to_vec());
        }
        let s = self.score(t, x_t)?;
        let grow = t.exp();
        let s2 = sigma_sq(t);
        Ok(x_t.iter().zip(&s).map(|(&x, &si)| grow * (x + s2 * si)).collect())
    }

    /// Conditional covariance of the increment noise `z_{t,t'}` given `x_t`:
    /// `sigma_D^4 h_t(x_t) + sigma_D^4 s s^T + sigma_D^2 I`, `D = t - t'`.
    pub fn conditional_noise_covariance(
        &self,
        t: f64,
        t_prev: f64,
        x_t: &[f64],
    ) -> Result<DMatrix<f64>> {
        if !(t_prev >= 0.0) || t_prev >= t {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= t_prev < t, got t_prev={t_prev}, t={t}"
            )));
        }
        let s2 = sigma_sq(t - t_prev);
        let s4 = s2 * s2;
        let at = self.at(t)?;
        let mut cov = at.hessian(x_t) * s4;
        let mut s = vec![0.0; self.d];
        at.score_into(x_t, &mut s);
        for i in 0..self.d {
            for j in 0..self.d {
                cov[(i, j)] += s4 * s[i] * s[j];
            }
            cov[(i, i)] += s2;
        }
        Ok(cov)
    }

    /// Exact score Lipschitz constant at `t` (Gaussian targets only).
    pub fn lipschitz(&self, t: f64) -> Result<f64> {
        match self.at(t)? {
            OracleAt::Gauss { fac, .. } => Ok(fac.lipschitz),
            OracleAt::Gmm { .. } => Err(Error::InvalidArgument(
                "exact Lipschitz constant is only available for Gaussian targets".into(),
            )),
        }
    }

    /// Schedule-level constant `L = max_j ||Sigma_{t_j}^{-1}||_op`.
    pub fn lipschitz_max(&self, schedule: &Schedule) -> Result<f64> {
        let mut l = 0.0f64;
        for &t in schedule.times() {
            l = l.max(self.lipschitz(t)?);
        }
        Ok(l)
    }
}

impl<'a> OracleAt<'a> {
    pub fn dim(&self) -> usize {
        match self {
            OracleAt::Gauss { d, .. } | OracleAt::Gmm { d, .. } => *d,
        }
    }

    /// Write `s(t, x)` into `out`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            OracleAt::Gauss { fac, .. } => {
                linalg::matvec_into(&fac.inv, x, out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
            OracleAt::Gmm { d, means, vars, log_w, .. } => {
                let k = vars.len();
                // Log-space responsibilities with the max-component shift.
                let mut max_l = f64::NEG_INFINITY;
                for i in 0..k {
                    max_l = max_l.max(self.gmm_component_log(i, x, *d, means, vars, log_w));
                }
                let mut denom = 0.0;
                out.fill(0.0);
                for i in 0..k {
                    let w = (self.gmm_component_log(i, x, *d, means, vars, log_w) - max_l).exp();
                    denom += w;
                    let inv_v = 1.0 / vars[i];
                    let mean = &means[i * d..(i + 1) * d];
                    for c in 0..*d {
                        out[c] += w * (mean[c] - x[c]) * inv_v;
                    }
                }
                for v in out.iter_mut() {
                    *v /= denom;
                }
            }
        }
    }

    fn gmm_component_log(
        &self,
        i: usize,
        x: &[f64],
        d: usize,
        means: &[f64],
        vars: &[f64],
        log_w: &[f64],
    ) -> f64 {
        let mean = &means[i * d..(i + 1) * d];
        let mut q = 0.0;
        for c in 0..d {
            let r = x[c] - mean[c];
            q += r * r;
        }
        log_w[i] - 0.5 * q / vars[i] - 0.5 * d as f64 * (LN_2PI + vars[i].ln())
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            OracleAt::Gauss { d, fac, .. } => {
                let mut tmp = vec![0.0; *d];
                linalg::matvec_into(&fac.inv, x, &mut tmp);
                let quad: f64 = x.iter().zip(&tmp).map(|(a, b)| a * b).sum();
                -0.5 * (quad + fac.log_det + *d as f64 * LN_2PI)
            }
            OracleAt::Gmm { d, means, vars, log_w, .. } => {
                let k = vars.len();
                let mut max_l = f64::NEG_INFINITY;
                for i in 0..k {
                    max_l = max_l.max(self.gmm_component_log(i, x, *d, means, vars, log_w));
                }
                let sum: f64 = (0..k)
                    .map(|i| (self.gmm_component_log(i, x, *d, means, vars, log_w) - max_l).exp())
                    .sum();
                max_l + sum.ln()
            }
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            OracleAt::Gauss { fac, .. } => -&fac.inv,
            OracleAt::Gmm { d, means, vars, log_w, .. } => {
                let d = *d;
                let k = vars.len();
                let mut max_l = f64::NEG_INFINITY;
                for i in 0..k {
                    max_l = max_l.max(self.gmm_component_log(i, x, d, means, vars, log_w));
                }
                let mut denom = 0.0;
                let mut score = vec![0.0; d];
                let mut h = DMatrix::zeros(d, d);
                for i in 0..k {
                    let w = (self.gmm_component_log(i, x, d, means, vars, log_w) - max_l).exp();
                    denom += w;
                    let inv_v = 1.0 / vars[i];
                    let mean = &means[i * d..(i + 1) * d];
                    for a in 0..d {
                        let ga = (mean[a] - x[a]) * inv_v;
                        score[a] += w * ga;
                        for b in 0..d {
                            let gb = (mean[b] - x[b]) * inv_v;
                            h[(a, b)] += w * ga * gb;
                        }
                        h[(a, a)] -= w * inv_v;
                    }
                }
                h /= denom;
                for a in 0..d {
                    for b in 0..d {
                        h[(a, b)] -= (score[a] / denom) * (score[b] / denom);
                    }
                }
                h
            }
        }
    }

    /// Exact score Lipschitz constant (Gaussian only).
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            OracleAt::Gauss { fac, .. } => Some(fac.lipschitz),
            OracleAt::Gmm { .. } => None,
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            OracleAt::Gauss { t, .. } | OracleAt::Gmm { t, .. } => *t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    fn identity_gaussian(d: usize) -> TargetSpec {
        TargetSpec::gaussian(DMatrix::identity(d, d)).unwrap()
    }

    #[test]
    fn stationary_standard_normal_score_is_minus_x() {
        let oracle = ScoreOracle::new(identity_gaussian(2));
        for t in [0.0, 0.3, 2.0] {
            let s = oracle.score(t, &[0.7, -1.2]).unwrap();
            assert!((s[0] + 0.7).abs() < 1e-12 && (s[1] - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_gaussian_score_matches_hand_value() {
        // Sigma = 4, t = ln 2: Sigma_t = 4/4 + 3/4 = 1.75, s(2) = -8/7.
        let target = TargetSpec::gaussian(DMatrix::from_element(1, 1, 4.0)).unwrap();
        let oracle = ScoreOracle::new(target);
        let t = 2.0f64.ln();
        let s = oracle.score(t, &[2.0]).unwrap();
        assert!((s[0] + 8.0 / 7.0).abs() < 1e-12, "got {}", s[0]);
        let h = oracle.hessian(t, &[2.0]).unwrap();
        assert!((h[(0, 0)] + 1.0 / 1.75).abs() < 1e-12);
    }

    fn fd_score(oracle: &ScoreOracle, t: f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|c| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[c] += h;
                xm[c] -= h;
                (oracle.log_density(t, &xp).unwrap() - oracle.log_density(t, &xm).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn score_matches_log_density_finite_differences() {
        let mut rng = stream(5, StreamDomain::Experiment, 0);
        let sigma = linalg::random_spd_uniform_eigs(3, 1.0, 2.0, &mut rng);
        let cases: Vec<(ScoreOracle, Vec<f64>)> = vec![
            (ScoreOracle::new(TargetSpec::gaussian(sigma).unwrap()), vec![0.4, -0.9, 1.3]),
            (
                ScoreOracle::new(
                    TargetSpec::gmm_1d(&[-5.0, 5.0], &[0.5, 1.5], &[0.7, 0.3]).unwrap(),
                ),
                vec![1.7],
            ),
        ];
        for (oracle, x) in &cases {
            for t in [0.05, 0.6, 2.5] {
                let s = oracle.score(t, x).unwrap();
                let fd = fd_score(oracle, t, x);
                for (a, b) in s.iter().zip(&fd) {
                    let rel = (a - b).abs() / (a.abs().max(b.abs()) + 1e-9);
                    assert!(rel < 1e-5, "score {a} vs fd {b} (rel {rel:.2e}) at t={t}");
                }
            }
        }
    }

    #[test]
    fn gmm_hessian_matches_score_jacobian() {
        let oracle = ScoreOracle::new(
            TargetSpec::gmm(
                vec![DVector::from_vec(vec![2.0, -1.0]), DVector::from_vec(vec![-3.0, 0.5])],
                vec![0.8, 0.2],
                vec![0.4, 0.6],
            )
            .unwrap(),
        );
        let x = [0.3, -0.2];
        let t = 0.4;
        let h = oracle.hessian(t, &x).unwrap();
        let eps = 1e-5;
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += eps;
            xm[c] -= eps;
            let sp = oracle.score(t, &xp).unwrap();
            let sm = oracle.score(t, &xm).unwrap();
            for r in 0..2 {
                let fd = (sp[r] - sm[r]) / (2.0 * eps);
                let rel = (h[(r, c)] - fd).abs() / (h[(r, c)].abs().max(fd.abs()) + 1e-9);
                assert!(rel < 1e-5, "hessian ({r},{c}) {} vs fd {fd}", h[(r, c)]);
            }
        }
    }

    #[test]
    fn symmetric_gmm_score_at_origin_matches_finite_difference() {
        // Weights are asymmetric but the t->0+ score at x=0 is resolved by
        // the mixture posterior; zero-variance components are fine at t > 0.
        let oracle =
            ScoreOracle::new(TargetSpec::gmm_1d(&[5.0, -5.0], &[0.0, 0.0], &[0.7, 0.3]).unwrap());
        // Small t (the responsibilities must still be resolvable by the
        // 1e-5 difference step, which needs sigma_t^2/|means| >> 1e-5).
        let t = 0.01;
        let s = oracle.score(t, &[0.0]).unwrap();
        let fd = fd_score(&oracle, t, &[0.0]);
        assert!(
            (s[0] - fd[0]).abs() / (s[0].abs() + 1.0) < 1e-5,
            "score {} vs finite difference {}",
            s[0],
            fd[0]
        );
        // The weight imbalance drives the midpoint score toward the heavier
        // mode: s(0) = (w+ - w-) * mean * e^{-t} / var_t.
        let want = 0.4 * 5.0 * (-t as f64).exp() / sigma_sq(t);
        assert!((s[0] - want).abs() < 1e-9 * want);
    }

    #[test]
    fn point_mass_component_rejected_at_time_zero() {
        let oracle = ScoreOracle::new(TargetSpec::gmm_1d(&[0.0], &[0.0], &[1.0]).unwrap());
        assert!(matches!(
            oracle.score(0.0, &[0.1]),
            Err(Error::DegenerateEvaluation(_))
        ));
        // Posterior mean at t = 0 is still defined: it is x itself.
        assert_eq!(oracle.posterior_mean_x0(0.0, &[0.1]).unwrap(), vec![0.1]);
    }

    #[test]
    fn posterior_mean_special_cases() {
        let oracle = ScoreOracle::new(identity_gaussian(3));
        let x = [0.5, -2.0, 0.1];
        // Stationary target: E[x0|x_t] = e^{-t} x_t.
        let pm = oracle.posterior_mean_x0(1.0, &x).unwrap();
        for (p, &xi) in pm.iter().zip(&x) {
            assert!((p - (-1.0f64).exp() * xi).abs() < 1e-12);
        }
        // Symmetric target at the origin.
        let pm0 = oracle.posterior_mean_x0(0.7, &[0.0, 0.0, 0.0]).unwrap();
        assert!(pm0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conditional_noise_covariance_closed_form() {
        let oracle = ScoreOracle::new(identity_gaussian(2));
        let t = 1.0;
        let tp = 0.8;
        let s2 = sigma_sq(t - tp);
        let cov = oracle.conditional_noise_covariance(t, tp, &[0.0, 0.0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { s2 - s2 * s2 } else { 0.0 };
                assert!((cov[(i, j)] - want).abs() < 1e-14);
            }
        }
        // t_prev -> t collapses to the zero matrix.
        let tiny = oracle.conditional_noise_covariance(1.0, 1.0 - 1e-13, &[0.3, 0.1]).unwrap();
        assert!(tiny.iter().all(|v| v.abs() < 1e-11));
        assert!(oracle.conditional_noise_covariance(0.5, 0.5, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let target = identity_gaussian(2);
        let m = 100_000;
        let xs = sample_target(&target, m, 99).unwrap();
        let mut cov = [0.0f64; 4];
        for i in 0..m {
            let (a, b) = (xs[2 * i], xs[2 * i + 1]);
            cov[0] += a * a;
            cov[1] += a * b;
            cov[2] += a * b;
            cov[3] += b * b;
        }
        let tol = 3.0 / (m as f64).sqrt();
        let frob = ((cov[0] / m as f64 - 1.0).powi(2)
            + 2.0 * (cov[1] / m as f64).powi(2)
            + (cov[3] / m as f64 - 1.0).powi(2))
        .sqrt();
        assert!(frob < tol.max(0.05), "sample covariance off identity by {frob}");

        let again = sample_target(&target, m, 99).unwrap();
        assert_eq!(xs, again, "same seed must reproduce draws bit-exactly");
    }

    #[test]
    fn degenerate_point_mass_samples_exactly_zero() {
        let target = TargetSpec::gmm_1d(&[0.0], &[0.0], &[1.0]).unwrap();
        let xs = sample_target(&target, 50, 1).unwrap();
        assert!(xs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gmm_mixture_fractions_match_weights() {
        let target = TargetSpec::gmm_1d(&[5.0, -5.0], &[1.0, 1.0], &[0.7, 0.3]).unwrap();
        let m = 10_000;
        let xs = sample_target(&target, m, 7).unwrap();
        let near_plus = xs.iter().filter(|&&v| v > 0.0).count() as f64 / m as f64;
        assert!(
            (near_plus - 0.7).abs() < 0.02,
            "fraction near +5 was {near_plus}, expected 0.7 +- 0.02"
        );
    }

    #[test]
    fn invalid_targets_rejected() {
        let mut asym = DMatrix::identity(2, 2);
        asym[(0, 1)] = 0.5;
        assert!(TargetSpec::gaussian(asym).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(TargetSpec::gaussian(not_pd).is_err());
        assert!(TargetSpec::gmm_1d(&[0.0, 1.0], &[1.0, 1.0], &[0.6, 0.39]).is_err());
        assert!(TargetSpec::gmm_1d(&[], &[], &[]).is_err());
        assert!(TargetSpec::gmm_1d(&[0.0], &[-1.0], &[1.0]).is_err());
    }

    #[test]
    fn target_json_round_trip() {
        let g = identity_gaussian(2);
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("\"kind\":\"gaussian\""));
        assert_eq!(serde_json::from_str::<TargetSpec>(&s).unwrap(), g);

        let mix = TargetSpec::gmm_1d(&[5.0, -5.0], &[0.0, 0.0], &[0.7, 0.3]).unwrap();
        let s = serde_json::to_string(&mix).unwrap();
        assert_eq!(serde_json::from_str::<TargetSpec>(&s).unwrap(), mix);

        // Invalid wire data is rejected during deserialization.
        let bad = r#"{"kind":"gmm","means":[[0.0]],"variances":[1.0],"weights":[0.5]}"#;
        assert!(serde_json::from_str::<TargetSpec>(bad).is_err());
    }

    #[test]
    fn schedule_cache_agrees_with_fresh_computation() {
        let schedule = Schedule::new(ScheduleKind::Linear, 8, 2.0).unwrap();
        let mut rng = stream(2, StreamDomain::Experiment, 3);
        let sigma = linalg::random_spd_uniform_eigs(3, 1.0, 2.0, &mut rng);
        let target = TargetSpec::gaussian(sigma).unwrap();
        let cached = ScoreOracle::with_schedule(target.clone(), &schedule).unwrap();
        let fresh = ScoreOracle::new(target);
        let x = [0.2, -0.4, 0.9];
        for &t in schedule.times() {
            assert_eq!(cached.score(t, &x).unwrap(), fresh.score(t, &x).unwrap());
        }
    }

    #[test]
    fn lipschitz_is_inverse_smallest_eigenvalue() {
        let target = TargetSpec::gaussian(DMatrix::from_element(1, 1, 4.0)).unwrap();
        let oracle = ScoreOracle::new(target);
        let t = 2.0f64.ln();
        // Sigma_t = 1.75 in 1-D, so L(t) = 1/1.75.
        assert!((oracle.lipschitz(t).unwrap() - 1.0 / 1.75).abs() < 1e-12);
    }
}
