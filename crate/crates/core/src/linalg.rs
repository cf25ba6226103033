//! Thin dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Condition number cap for every SPD factorization in the crate.
pub const MAX_CONDITION: f64 = 1e12;

/// Symmetric eigendecomposition-based condition number (lambda_max / lambda_min).
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Largest |eigenvalue| of a symmetric matrix.
pub fn sym_opnorm(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()))
}

/// Cholesky of an SPD matrix, with the shared condition-number guard.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let cond = sym_condition(m);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned(format!(
            "{what}: condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}"
        )));
    }
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::IllConditioned(format!("{what}: not positive-definite")))
}

/// Inverse of an SPD matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(spd_cholesky(m, what)?.inverse())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// y = A x for a column-major nalgebra matrix and slice vectors.
pub fn matvec_into(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = a.shape();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(rows, out.len());
    out.fill(0.0);
    let data = a.as_slice();
    for (c, &xc) in x.iter().enumerate() {
        let col = &data[c * rows..(c + 1) * rows];
        for (o, &a_rc) in out.iter_mut().zip(col) {
            *o += a_rc * xc;
        }
    }
}

/// Random d x d Gaussian-orthogonal-ensemble style rotation: QR of an iid
/// normal matrix with the sign convention diag(R) > 0, which makes Q a
/// deterministic function of the draws.
pub fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            for rix in 0..d {
                q[(rix, c)] = -q[(rix, c)];
            }
        }
    }
    q
}

/// Random SPD covariance Q diag(lambda) Q^T with lambda_i ~ Uniform(lo, hi).
pub fn random_spd_uniform_eigs(
    d: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let q = random_rotation(d, rng);
    let eigs = DVector::from_fn(d, |_, _| rng.random_range(lo..hi));
    &q * DMatrix::from_diagonal(&eigs) * q.transpose()
}

/// Random covariance `scale * (M M^T + v v^T)` with iid standard normal
/// entries; positive definite almost surely.
pub fn random_factor_cov(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&m * m.transpose() + &v * v.transpose()) * scale
}
