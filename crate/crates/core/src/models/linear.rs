//! Per-timestep affine score models and their exact least-squares fit.

use nalgebra::{DMatrix, DVector};

use crate::dataset::NoisedDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ScoreFn;

/// One affine map `f(t_j, x) = A_j x + b_j` per schedule timestep.
#[derive(Debug, Clone)]
pub struct LinearScoreModel {
    times: Vec<f64>,
    d: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl LinearScoreModel {
    pub fn new(times: Vec<f64>, a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != a.len() || times.len() != b.len() {
            return Err(Error::InvalidArgument(
                "need matching non-empty times/A/b lists".into(),
            ));
        }
        let d = b[0].len();
        if a.iter().any(|m| m.shape() != (d, d)) || b.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidArgument("inconsistent map shapes".into()));
        }
        Ok(LinearScoreModel { times, d, a, b })
    }

    /// Oracle-equal model `A_j = -Sigma_{t_j}^{-1}, b_j = 0` for a Gaussian
    /// target; handy as a pool member and in controlled-bias experiments.
    pub fn from_gaussian_oracle(
        oracle: &crate::targets::ScoreOracle,
        times: &[f64],
    ) -> Result<Self> {
        let d = oracle.dim();
        let mut a = Vec::with_capacity(times.len());
        for &t in times {
            a.push(oracle.hessian(t, &vec![0.0; d])?);
        }
        let b = vec![DVector::zeros(d); times.len()];
        Self::new(times.to_vec(), a, b)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn map(&self, j: usize) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a[j], &self.b[j])
    }

    pub fn map_mut(&mut self, j: usize) -> (&mut DMatrix<f64>, &mut DVector<f64>) {
        (&mut self.a[j], &mut self.b[j])
    }

    pub fn set_map(&mut self, j: usize, a: DMatrix<f64>, b: DVector<f64>) {
        self.a[j] = a;
        self.b[j] = b;
    }

    fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * t.abs().max(1.0);
        self.times.iter().position(|&u| (u - t).abs() <= tol)
    }
}

impl ScoreFn for LinearScoreModel {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let j = self.index_of(t).ok_or(Error::OffGridTime { t })?;
        linalg::matvec_into(&self.a[j], x, out);
        for (o, &bv) in out.iter_mut().zip(self.b[j].iter()) {
            *o += bv;
        }
        Ok(())
    }
}

/// Exact affine least squares: minimize `sum_i ||A x_i + b - y_i||^2` over
/// `(A, b)` via the normal equations with an SPD solve.
///
/// `xs` and `ys` are flat row-major `m x d_in` / `m x d_out`. Rejects
/// designs whose Gram matrix has condition number above 1e12.
pub fn fit_affine(
    xs: &[f64],
    ys: &[f64],
    m: usize,
    d_in: usize,
    d_out: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m == 0 || xs.len() != m * d_in || ys.len() != m * d_out {
        return Err(Error::InvalidArgument("design/target shape mismatch".into()));
    }
    if m <= d_in + 1 {
        return Err(Error::InvalidArgument(format!(
            "need m > d_in + 1 rows for a well-posed affine fit (m={m}, d_in={d_in})"
        )));
    }
    let p = d_in + 1; // augmented with the constant column
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DMatrix::zeros(p, d_out);
    // Accumulate X^T X and X^T Y over augmented rows [x | 1].
    for i in 0..m {
        let x = &xs[i * d_in..(i + 1) * d_in];
        let y = &ys[i * d_out..(i + 1) * d_out];
        for a in 0..d_in {
            for b in a..d_in {
                gram[(a, b)] += x[a] * x[b];
            }
            gram[(a, d_in)] += x[a];
            for c in 0..d_out {
                rhs[(a, c)] += x[a] * y[c];
            }
        }
        for c in 0..d_out {
            rhs[(d_in, c)] += y[c];
        }
    }
    gram[(d_in, d_in)] = m as f64;
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    let cond = linalg::sym_condition(&gram);
    if !cond.is_finite() || cond > linalg::MAX_CONDITION {
        return Err(Error::SingularDesign { cond });
    }
    let chol = nalgebra::Cholesky::new(gram)
        .ok_or(Error::SingularDesign { cond })?;
    let w = chol.solve(&rhs); // p x d_out, rows = [A^T ; b^T]

    let a = DMatrix::from_fn(d_out, d_in, |r, c| w[(c, r)]);
    let b = DVector::from_fn(d_out, |r, _| w[(d_in, r)]);
    Ok((a, b))
}

/// Least-squares fit of `targets` on the dataset states at timestep `j`.
pub fn fit_linear_least_squares(
    dataset: &NoisedDataset,
    j: usize,
    targets: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (m, d) = (dataset.m(), dataset.dim());
    if targets.len() != m * d {
        return Err(Error::InvalidArgument(format!(
            "targets must be m x d = {} values, got {}",
            m * d,
            targets.len()
        )));
    }
    let xs = dataset.states_at(j);
    fit_affine(&xs, targets, m, d, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamDomain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn noiseless_affine_recovery() {
        let mut rng = stream(1, StreamDomain::Experiment, 0);
        let d = 3;
        let m = 40;
        let a_true = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b_true = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut xs = vec![0.0; m * d];
        let mut ys = vec![0.0; m * d];
        for i in 0..m {
            let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &a_true * &x + &b_true;
            xs[i * d..(i + 1) * d].copy_from_slice(x.as_slice());
            ys[i * d..(i + 1) * d].copy_from_slice(y.as_slice());
        }
        let (a, b) = fit_affine(&xs, &ys, m, d, d).unwrap();
        assert!(linalg::frobenius(&(&a - &a_true)) < 1e-8 * linalg::frobenius(&a_true));
        assert!((&b - &b_true).norm() < 1e-8);
    }

    #[test]
    fn minimal_row_count_keeps_residual_orthogonal_to_design() {
        let mut rng = stream(2, StreamDomain::Experiment, 0);
        let d = 4;
        let m = d + 2;
        let xs: Vec<f64> = (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ys: Vec<f64> = (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (a, b) = fit_affine(&xs, &ys, m, d, d).unwrap();

        // design^T residual = 0 column-wise at the solution.
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for col in 0..=d {
            for out_c in 0..d {
                let mut dot = 0.0;
                for i in 0..m {
                    let x = &xs[i * d..(i + 1) * d];
                    let mut pred = b[out_c];
                    for k in 0..d {
                        pred += a[(out_c, k)] * x[k];
                    }
                    let r = pred - ys[i * d + out_c];
                    let feat = if col < d { x[col] } else { 1.0 };
                    dot += feat * r;
                    scale = scale.max(feat.abs() * r.abs());
                }
                worst = worst.max(dot.abs());
            }
        }
        assert!(worst < 1e-8 * scale.max(1.0), "residual not orthogonal: {worst}");
    }

    #[test]
    fn rank_deficient_design_is_detected() {
        // All rows identical: Gram matrix is singular.
        let m = 10;
        let d = 2;
        let xs = vec![1.0; m * d];
        let ys = vec![0.5; m * d];
        match fit_affine(&xs, &ys, m, d, d) {
            Err(Error::SingularDesign { .. }) => {}
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let d = 3;
        let m = d + 1;
        assert!(fit_affine(&vec![0.0; m * d], &vec![0.0; m * d], m, d, d).is_err());
    }

    #[test]
    fn eval_rejects_off_grid_times() {
        let model = LinearScoreModel::new(
            vec![0.5, 1.0],
            vec![DMatrix::identity(2, 2); 2],
            vec![DVector::zeros(2); 2],
        )
        .unwrap();
        assert!(model.eval(0.5, &[1.0, 2.0]).is_ok());
        assert!(matches!(
            model.eval(0.75, &[1.0, 2.0]),
            Err(Error::OffGridTime { .. })
        ));
    }
}
