//! Bias-corrected Adam.

use super::mlp::ParamVector;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamParams,
}

impl AdamState {
    pub fn new(dim: usize, hyper: AdamParams) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            hyper,
        }
    }
}

/// One Adam update. Pure: returns the new parameters and state.
pub fn adam_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &AdamState,
) -> Result<(ParamVector, AdamState)> {
    let n = params.len();
    if grad.len() != n {
        return Err(CoreError::Shape {
            what: "adam gradient",
            expected: n,
            got: grad.len(),
        });
    }
    if state.m.len() != n {
        return Err(CoreError::Shape {
            what: "adam state",
            expected: n,
            got: state.m.len(),
        });
    }
    let h = state.hyper;
    let t = state.t + 1;
    let mut new = state.clone();
    new.t = t;
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    let mut theta = params.0.clone();
    for i in 0..n {
        let g = grad.0[i];
        new.m[i] = h.beta1 * new.m[i] + (1.0 - h.beta1) * g;
        new.v[i] = h.beta2 * new.v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = new.m[i] / bc1;
        let v_hat = new.v[i] / bc2;
        theta[i] -= h.step_size * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok((ParamVector(theta), new))
}
