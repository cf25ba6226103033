//! Time-conditioned MLP with hand-written reverse-mode gradients.
//!
//! The network consumes `[x, tau(t)]` where `tau(t) = t / T` is the scalar
//! time embedding, so one set of parameters serves every noise level.
//! Hidden layers apply tanh or ReLU; the output layer is linear. Gradients
//! are computed by explicit backpropagation and are checked against central
//! finite differences in the test suite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamDomain};
use crate::ScoreFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a = act(z)`.
    #[inline]
    fn derivative_from_value(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Minibatch of `(t, x, target)` rows for training.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub t: Vec<f64>,
    /// Flat `B x d_in` states.
    pub x: Vec<f64>,
    /// Flat `B x d_out` regression targets.
    pub y: Vec<f64>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn clear(&mut self) {
        self.t.clear();
        self.x.clear();
        self.y.clear();
    }
}

/// Fully-connected score network `f(t, x)`.
#[derive(Debug, Clone)]
pub struct TimeMlp {
    /// Layer widths `[d+1, h_1, ..., d_out]`.
    widths: Vec<usize>,
    activation: Activation,
    /// Horizon used by the time embedding `tau = t / T`.
    horizon: f64,
    /// Grid times at which evaluation is legal.
    grid: Vec<f64>,
    params: Vec<f64>,
}

impl TimeMlp {
    /// Fresh network with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights
    /// and biases, drawn from `stream(seed, ParamInit, init_index)`.
    pub fn new(
        d: usize,
        hidden: &[usize],
        activation: Activation,
        grid: Vec<f64>,
        horizon: f64,
        seed: u64,
        init_index: u64,
    ) -> Result<Self> {
        if d == 0 || grid.is_empty() || !(horizon > 0.0) {
            return Err(Error::InvalidArgument(
                "mlp needs d > 0, a nonempty grid, and a positive horizon".into(),
            ));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(d + 1);
        widths.extend_from_slice(hidden);
        widths.push(d);
        let n_params: usize = widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        let mut params = vec![0.0; n_params];
        let mut rng = stream(seed, StreamDomain::ParamInit, init_index);
        let mut off = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in params[off..off + (fan_in + 1) * fan_out].iter_mut() {
                *p = rng.random_range(-bound..bound);
            }
            off += (fan_in + 1) * fan_out;
        }
        Ok(TimeMlp { widths, activation, horizon, grid, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0] - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Rebuild from stored parts (checkpoint loading).
    pub fn from_parts(
        widths: Vec<usize>,
        activation: Activation,
        horizon: f64,
        grid: Vec<f64>,
        params: Vec<f64>,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output widths".into()));
        }
        let expect: usize = widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        if params.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "parameter count {} does not match widths (expected {expect})",
                params.len()
            )));
        }
        Ok(TimeMlp { widths, activation, horizon, grid, params })
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out) per layer; weights first, then biases.
        let mut off = 0;
        self.widths.windows(2).map(move |w| {
            let here = (off, w[0], w[1]);
            off += (w[0] + 1) * w[1];
            here
        })
    }

    fn on_grid(&self, t: f64) -> bool {
        let tol = 1e-12 * t.abs().max(1.0);
        self.grid.iter().any(|&u| (u - t).abs() <= tol)
    }

    /// Forward pass without the grid check (training-internal).
    fn forward_unchecked(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let max_w = *self.widths.iter().max().unwrap();
        let mut buf = vec![0.0; 2 * max_w];
        let (mut cur, mut nxt) = buf.split_at_mut(max_w);
        cur[..x.len()].copy_from_slice(x);
        cur[x.len()] = t / self.horizon;
        let mut cur_len = x.len() + 1;
        let n_layers = self.widths.len() - 1;
        for (l, (off, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            debug_assert_eq!(fan_in, cur_len);
            let weights = &self.params[off..off + fan_in * fan_out];
            let biases = &self.params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut z = biases[o];
                for (a, w) in cur[..fan_in].iter().zip(row) {
                    z += a * w;
                }
                nxt[o] = if l + 1 == n_layers { z } else { self.activation.apply(z) };
            }
            std::mem::swap(&mut cur, &mut nxt);
            cur_len = fan_out;
        }
        out.copy_from_slice(&cur[..cur_len]);
    }

    /// Mean-squared-error loss and its exact gradient over a batch:
    /// `L = (1/B) sum_b ||f(t_b, x_b) - y_b||^2`.
    pub fn loss_and_grad(
        &self,
        batch: &TrainBatch,
        scratch: &mut MlpScratch,
        grad: &mut [f64],
    ) -> Result<f64> {
        let bsz = batch.len();
        if bsz == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let d_in = self.in_dim();
        let d_out = self.out_dim();
        if batch.x.len() != bsz * d_in || batch.y.len() != bsz * d_out {
            return Err(Error::InvalidArgument("batch shape mismatch".into()));
        }
        if grad.len() != self.params.len() {
            return Err(Error::InvalidArgument("gradient buffer shape mismatch".into()));
        }
        scratch.ensure(self, bsz);
        grad.fill(0.0);

        // Input activations [x | tau].
        let w0 = self.widths[0];
        for b in 0..bsz {
            let row = &mut scratch.acts[0][b * w0..(b + 1) * w0];
            row[..d_in].copy_from_slice(&batch.x[b * d_in..(b + 1) * d_in]);
            row[d_in] = batch.t[b] / self.horizon;
        }

        // Forward.
        let n_layers = self.widths.len() - 1;
        for (l, (off, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            let weights = &self.params[off..off + fan_in * fan_out];
            let biases = &self.params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            let (lo, hi) = scratch.acts.split_at_mut(l + 1);
            let prev = &lo[l];
            let next = &mut hi[0];
            let last = l + 1 == n_layers;
            for b in 0..bsz {
                let a_row = &prev[b * fan_in..(b + 1) * fan_in];
                let out_row = &mut next[b * fan_out..(b + 1) * fan_out];
                for o in 0..fan_out {
                    let w_row = &weights[o * fan_in..(o + 1) * fan_in];
                    let mut z = biases[o];
                    for (a, w) in a_row.iter().zip(w_row) {
                        z += a * w;
                    }
                    out_row[o] = if last { z } else { self.activation.apply(z) };
                }
            }
        }

        // Loss and output delta (2/B scaling folded in here).
        let inv_b = 1.0 / bsz as f64;
        let out_acts = &scratch.acts[n_layers];
        let mut loss = 0.0;
        scratch.delta.resize(bsz * d_out, 0.0);
        for (idx, (&a, &y)) in out_acts.iter().zip(&batch.y).enumerate() {
            let r = a - y;
            loss += r * r;
            scratch.delta[idx] = 2.0 * inv_b * r;
        }
        loss *= inv_b;

        // Backward.
        let offsets: Vec<(usize, usize, usize)> = self.layer_offsets().collect();
        for l in (0..n_layers).rev() {
            let (off, fan_in, fan_out) = offsets[l];
            let weights = &self.params[off..off + fan_in * fan_out];
            let (gw, gb) = {
                let g = &mut grad[off..off + (fan_in + 1) * fan_out];
                g.split_at_mut(fan_in * fan_out)
            };
            let prev = &scratch.acts[l];
            for b in 0..bsz {
                let d_row = &scratch.delta[b * fan_out..(b + 1) * fan_out];
                let a_row = &prev[b * fan_in..(b + 1) * fan_in];
                for o in 0..fan_out {
                    let dv = d_row[o];
                    if dv == 0.0 {
                        continue;
                    }
                    gb[o] += dv;
                    let gw_row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, a) in gw_row.iter_mut().zip(a_row) {
                        *g += dv * a;
                    }
                }
            }
            if l > 0 {
                scratch.delta_prev.resize(bsz * fan_in, 0.0);
                scratch.delta_prev.fill(0.0);
                for b in 0..bsz {
                    let d_row = &scratch.delta[b * fan_out..(b + 1) * fan_out];
                    let p_row = &mut scratch.delta_prev[b * fan_in..(b + 1) * fan_in];
                    for o in 0..fan_out {
                        let dv = d_row[o];
                        if dv == 0.0 {
                            continue;
                        }
                        let w_row = &weights[o * fan_in..(o + 1) * fan_in];
                        for (p, w) in p_row.iter_mut().zip(w_row) {
                            *p += dv * w;
                        }
                    }
                    let a_row = &prev[b * fan_in..(b + 1) * fan_in];
                    for (p, &a) in p_row.iter_mut().zip(a_row) {
                        *p *= self.activation.derivative_from_value(a);
                    }
                }
                std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
            }
        }
        Ok(loss)
    }

    /// Batch loss without gradients (evaluation).
    pub fn loss(&self, batch: &TrainBatch, scratch: &mut MlpScratch) -> Result<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.loss_and_grad(batch, scratch, &mut grad)
    }
}

impl ScoreFn for TimeMlp {
    fn dim(&self) -> usize {
        self.out_dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.on_grid(t) {
            return Err(Error::OffGridTime { t });
        }
        self.forward_unchecked(t, x, out);
        Ok(())
    }
}

/// Reusable forward/backward buffers.
#[derive(Debug, Default)]
pub struct MlpScratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    capacity: usize,
}

impl MlpScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, mlp: &TimeMlp, bsz: usize) {
        if self.acts.len() != mlp.widths.len() || self.capacity < bsz {
            self.acts = mlp.widths.iter().map(|&w| vec![0.0; w * bsz]).collect();
            self.capacity = bsz;
        } else {
            for (a, &w) in self.acts.iter_mut().zip(&mlp.widths) {
                a.resize(w * bsz, 0.0);
            }
        }
    }
}
