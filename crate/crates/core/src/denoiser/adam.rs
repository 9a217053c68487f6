use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(num_params: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![S::ZERO; num_params],
            v: vec![S::ZERO; num_params],
            step: 0,
            cfg,
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [S], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| {
            let g = g.to_f64();
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = S::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// One bias-corrected Adam update. Returns `Ok(false)` and leaves
/// everything untouched when a gradient is non-finite.
pub fn adam_step<S: Scalar>(params: &mut [S], grads: &[S], state: &mut AdamState<S>) -> Result<bool> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        log::warn!("skipping optimizer step {}: non-finite gradient", state.step + 1);
        return Ok(false);
    }
    state.step += 1;
    let c = state.cfg;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    let (b1, b2) = (S::from_f64(c.beta1), S::from_f64(c.beta2));
    let (ob1, ob2) = (S::from_f64(1.0 - c.beta1), S::from_f64(1.0 - c.beta2));
    let step_size = S::from_f64(c.lr / bc1);
    let inv_sqrt_bc2 = S::from_f64(1.0 / bc2.sqrt());
    let eps = S::from_f64(c.eps);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + ob1 * g;
        *v = b2 * *v + ob2 * g * g;
        *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
    }
    Ok(true)
}
