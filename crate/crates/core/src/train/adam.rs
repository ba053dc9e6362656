use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tensor, UNetParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &UNetParams<f32>) -> Self {
        let zeros: Vec<Tensor<f32>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_step(params: &mut UNetParams<f32>, grads: &UNetParams<f32>, state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    if grads.tensors().len() != params.tensors().len() || state.m.len() != params.tensors().len() {
        return Err(Error::arg("gradient/state count does not match parameters"));
    }
    for ((name, p), g) in params.iter().zip(grads.tensors()) {
        if p.shape() != g.shape() {
            return Err(Error::arg(format!("gradient for {name} has shape {:?}", g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::numeric(format!("gradient of {name}"), "non-finite value"));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = *config;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1f, b2f) = (b1 as f32, b2 as f32);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.tensors()[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1f * m[j] + (1.0 - b1f) * g[j];
            v[j] = b2f * v[j] + (1.0 - b2f) * g[j] * g[j];
            let m_hat = m[j] as f64 / c1;
            let v_hat = v[j] as f64 / c2;
            *theta -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}
