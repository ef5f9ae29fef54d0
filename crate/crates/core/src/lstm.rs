//! Single-layer LSTM with a forget gate and a linear scalar head.
//!
//! Gate blocks are stacked in the fixed order input, forget, candidate, output
//! (`i, f, g, o`). For gate `k` and hidden unit `j` the stacked row is
//! `k * hidden_dim + j`; matrices are row-major.
//!
//! ```text
//! i  = σ(W_x[i] x + W_h[i] h + b[i])      f, o likewise
//! g  = tanh(W_x[g] x + W_h[g] h + b[g])
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ŷ  = v · h' + c_out
//! ```

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sigmoid, Scalar};

pub const GATES: usize = 4;
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CANDIDATE: usize = 2;
pub const GATE_OUTPUT: usize = 3;

/// Tensor order used for flattening, clipping and checkpoints.
pub const TENSOR_NAMES: [&str; 5] = ["w_x", "w_h", "b", "v", "c_out"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LstmError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("non-finite value in forward pass at step {step}")]
    NonFiniteOutput { step: usize },
    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4·hidden_dim × input_dim`.
    pub w_x: Vec<T>,
    /// `4·hidden_dim × hidden_dim`.
    pub w_h: Vec<T>,
    /// `4·hidden_dim`.
    pub b: Vec<T>,
    /// `1 × hidden_dim` output head.
    pub v: Vec<T>,
    pub c_out: T,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = LstmParams<T>;

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            w_x: vec![T::zero(); GATES * hidden_dim * input_dim],
            w_h: vec![T::zero(); GATES * hidden_dim * hidden_dim],
            b: vec![T::zero(); GATES * hidden_dim],
            v: vec![T::zero(); hidden_dim],
            c_out: T::zero(),
        }
    }

    /// Weights uniform in `±1/sqrt(hidden_dim)`, biases zero except the
    /// forget gate at 1.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        for w in p.w_x.iter_mut().chain(p.w_h.iter_mut()).chain(p.v.iter_mut()) {
            *w = T::lit(rng.random_range(-scale..scale));
        }
        for bias in &mut p.b[GATE_FORGET * hidden_dim..(GATE_FORGET + 1) * hidden_dim] {
            *bias = T::one();
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }

    pub fn tensors(&self) -> [&[T]; 5] {
        [&self.w_x, &self.w_h, &self.b, &self.v, std::slice::from_ref(&self.c_out)]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 5] {
        let LstmParams { w_x, w_h, b, v, c_out, .. } = self;
        [w_x, w_h, b, v, std::slice::from_mut(c_out)]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let [a, b, c, d, e] = self.tensors();
        a.iter().chain(b).chain(c).chain(d).chain(e)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        let [a, b, c, d, e] = self.tensors_mut();
        a.iter_mut().chain(b.iter_mut()).chain(c.iter_mut()).chain(d.iter_mut()).chain(e.iter_mut())
    }

    pub fn global_norm(&self) -> T {
        self.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// First tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .iter()
            .zip(TENSOR_NAMES)
            .find(|(t, _)| t.iter().any(|x| !x.is_finite()))
            .map(|(_, name)| name)
    }

    pub fn scale(&mut self, factor: T) {
        self.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn check_shapes(&self) -> Result<(), LstmError> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        let expect = [GATES * h * i, GATES * h * h, GATES * h, h];
        for ((t, name), n) in self.tensors().iter().zip(TENSOR_NAMES).zip(expect) {
            if t.len() != n {
                return Err(LstmError::DimensionMismatch { what: name, expected: n, found: t.len() });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> LstmParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        LstmParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_x: c(&self.w_x),
            w_h: c(&self.w_h),
            b: c(&self.b),
            v: c(&self.v),
            c_out: U::lit(self.c_out.as_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState { h: vec![T::zero(); hidden_dim], c: vec![T::zero(); hidden_dim] }
    }
}

/// Values from one forward step needed by the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Activated gates `[i | f | g | o]`, each `hidden_dim` long.
    pub gates: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
}

pub fn cell_forward<T: Scalar>(
    params: &LstmParams<T>,
    state: &LstmState<T>,
    x: &[T],
) -> Result<(LstmState<T>, T, StepCache<T>), LstmError> {
    let (n_in, n_h) = (params.input_dim, params.hidden_dim);
    if x.len() != n_in {
        return Err(LstmError::DimensionMismatch { what: "input", expected: n_in, found: x.len() });
    }
    if state.h.len() != n_h || state.c.len() != n_h {
        return Err(LstmError::DimensionMismatch { what: "state", expected: n_h, found: state.h.len() });
    }

    let mut gates = params.b.clone();
    for (r, z) in gates.iter_mut().enumerate() {
        let wx = &params.w_x[r * n_in..(r + 1) * n_in];
        let wh = &params.w_h[r * n_h..(r + 1) * n_h];
        *z += dot(wx, x) + dot(wh, &state.h);
    }
    for (r, z) in gates.iter_mut().enumerate() {
        *z = if r / n_h == GATE_CANDIDATE { z.tanh() } else { sigmoid(*z) };
    }

    let mut c = vec![T::zero(); n_h];
    let mut tanh_c = vec![T::zero(); n_h];
    let mut h = vec![T::zero(); n_h];
    for j in 0..n_h {
        let (i, f, g, o) = (gates[j], gates[n_h + j], gates[2 * n_h + j], gates[3 * n_h + j]);
        c[j] = f * state.c[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
    let prediction = dot(&params.v, &h) + params.c_out;
    if !prediction.is_finite() || c.iter().any(|v| !v.is_finite()) {
        return Err(LstmError::NonFiniteOutput { step: 0 });
    }

    let cache = StepCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gates,
        c: c.clone(),
        tanh_c,
        h: h.clone(),
    };
    Ok((LstmState { h, c }, prediction, cache))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub predictions: Vec<T>,
    pub caches: Vec<StepCache<T>>,
    pub final_state: LstmState<T>,
}

/// Runs the cell over `rows` starting from `initial`.
pub fn forward_from<T: Scalar, R: AsRef<[T]>>(
    params: &LstmParams<T>,
    initial: LstmState<T>,
    rows: &[R],
) -> Result<Forward<T>, LstmError> {
    let mut state = initial;
    let mut predictions = Vec::with_capacity(rows.len());
    let mut caches = Vec::with_capacity(rows.len());
    for (step, row) in rows.iter().enumerate() {
        let (next, y, cache) = cell_forward(params, &state, row.as_ref()).map_err(|e| match e {
            LstmError::NonFiniteOutput { .. } => LstmError::NonFiniteOutput { step },
            other => other,
        })?;
        predictions.push(y);
        caches.push(cache);
        state = next;
    }
    Ok(Forward { predictions, caches, final_state: state })
}

/// Whole sequence from a zero state.
pub fn sequence_forward<T: Scalar, R: AsRef<[T]>>(
    params: &LstmParams<T>,
    rows: &[R],
) -> Result<Forward<T>, LstmError> {
    forward_from(params, LstmState::zeros(params.hidden_dim), rows)
}

#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub grads: Gradients<T>,
    /// Mean squared error over masked-in steps.
    pub loss: T,
    pub masked_count: usize,
}

impl<T> Backward<T> {
    /// No step contributed: loss and gradients are zero.
    pub fn all_masked(&self) -> bool {
        self.masked_count == 0
    }
}

pub fn masked_mse<T: Scalar>(predictions: &[T], targets: &[T], mask: &[bool]) -> (T, usize) {
    let mut sum = T::zero();
    let mut n = 0;
    for ((&p, &y), &m) in predictions.iter().zip(targets).zip(mask) {
        if m {
            sum += (p - y) * (p - y);
            n += 1;
        }
    }
    if n == 0 {
        (T::zero(), 0)
    } else {
        (sum / T::from_usize_lossy(n), n)
    }
}

/// Backpropagation through time over one window. Gradients do not flow into
/// the state the window started from.
pub fn sequence_backward<T: Scalar>(
    params: &LstmParams<T>,
    caches: &[StepCache<T>],
    predictions: &[T],
    targets: &[T],
    mask: &[bool],
) -> Result<Backward<T>, LstmError> {
    let steps = caches.len();
    for (what, len) in [("predictions", predictions.len()), ("targets", targets.len()), ("mask", mask.len())] {
        if len != steps {
            return Err(LstmError::DimensionMismatch { what, expected: steps, found: len });
        }
    }
    let (loss, masked_count) = masked_mse(predictions, targets, mask);
    let mut grads = params.zeros_like();
    if masked_count == 0 {
        return Ok(Backward { grads, loss, masked_count });
    }

    let (n_in, n_h) = (params.input_dim, params.hidden_dim);
    let scale = T::lit(2.0) / T::from_usize_lossy(masked_count);
    let mut dh_next = vec![T::zero(); n_h];
    let mut dc_next = vec![T::zero(); n_h];
    let mut da = vec![T::zero(); GATES * n_h];

    for t in (0..steps).rev() {
        let cache = &caches[t];
        let dy = if mask[t] { scale * (predictions[t] - targets[t]) } else { T::zero() };
        grads.c_out += dy;

        for j in 0..n_h {
            grads.v[j] += dy * cache.h[j];
            let dh = dy * params.v[j] + dh_next[j];
            let (i, f, g, o) = (
                cache.gates[j],
                cache.gates[n_h + j],
                cache.gates[2 * n_h + j],
                cache.gates[3 * n_h + j],
            );
            let tc = cache.tanh_c[j];
            let dc = dh * o * (T::one() - tc * tc) + dc_next[j];
            da[j] = dc * g * i * (T::one() - i);
            da[n_h + j] = dc * cache.c_prev[j] * f * (T::one() - f);
            da[2 * n_h + j] = dc * i * (T::one() - g * g);
            da[3 * n_h + j] = dh * tc * o * (T::one() - o);
            dc_next[j] = dc * f;
        }

        dh_next.iter_mut().for_each(|v| *v = T::zero());
        for (r, &d) in da.iter().enumerate() {
            grads.b[r] += d;
            let gx = &mut grads.w_x[r * n_in..(r + 1) * n_in];
            for (g, &x) in gx.iter_mut().zip(&cache.x) {
                *g += d * x;
            }
            let gh = &mut grads.w_h[r * n_h..(r + 1) * n_h];
            let wh = &params.w_h[r * n_h..(r + 1) * n_h];
            for k in 0..n_h {
                gh[k] += d * cache.h_prev[k];
                dh_next[k] += wh[k] * d;
            }
        }
    }

    if let Some(tensor) = grads.first_non_finite() {
        return Err(LstmError::NonFiniteGradient { tensor });
    }
    Ok(Backward { grads, loss, masked_count })
}

/// Contiguous non-overlapping windows covering `0..len`; the last may be short.
pub fn truncated_windows(len: usize, window: usize) -> Vec<Range<usize>> {
    assert!(window >= 1, "window must be at least 1");
    (0..len).step_by(window).map(|start| start..(start + window).min(len)).collect()
}
