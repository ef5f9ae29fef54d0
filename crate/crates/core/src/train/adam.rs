//! Adam with bias correction, applied after global-norm gradient clipping.

use crate::lstm::{Gradients, LstmParams};
use crate::scalar::Scalar;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub grad_clip_norm: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            learning_rate: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            grad_clip_norm: T::lit(5.0),
        }
    }
}

/// First/second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: LstmParams<T>,
    pub v: LstmParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &LstmParams<T>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo<T> {
    pub pre_clip_norm: T,
    pub post_clip_norm: T,
    pub clipped: bool,
}

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: T) -> T {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

pub fn adam_step<T: Scalar>(
    params: &mut LstmParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig<T>,
) -> Result<StepInfo<T>, TrainError> {
    if let Some(tensor) = grads.first_non_finite() {
        return Err(TrainError::NonFiniteGradient { tensor });
    }
    let mut g = grads.clone();
    let pre_clip_norm = clip_global_norm(&mut g, config.grad_clip_norm);
    let post_clip_norm = g.global_norm();

    state.step += 1;
    let t = state.step as i32;
    let bias1 = T::one() - config.beta1.powi(t);
    let bias2 = T::one() - config.beta2.powi(t);
    let (b1, b2) = (config.beta1, config.beta2);

    for (((p, &g), m), v) in params.iter_mut().zip(g.iter()).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(StepInfo { pre_clip_norm, post_clip_norm, clipped: pre_clip_norm > config.grad_clip_norm })
}
