use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, one buffer per parameter in table order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            config,
        }
    }
}

/// One Adam update with decoupled weight decay, then clears the gradients.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "optimizer tracks {} parameters, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    let c = state.config;
    state.step += 1;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for (((_, t), m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.len() != t.len() {
            return Err(Error::shape("optimizer moment size differs from parameter"));
        }
        let grad = t.grad().to_vec();
        for (i, w) in t.values_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *w);
        }
        t.zero_grad();
    }
    Ok(())
}

/// `target <- decay * target + (1 - decay) * online`, elementwise.
pub fn ema_update(target: &mut ModelParams, online: &ModelParams, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::invalid(format!(
            "EMA decay must lie in [0, 1], got {decay}"
        )));
    }
    if !target.same_architecture(online) {
        return Err(Error::shape(
            "EMA target and online networks differ in architecture",
        ));
    }
    for ((_, t), (_, o)) in target.iter_mut().zip(online.iter()) {
        t.values_mut()
            .iter_mut()
            .zip(o.values())
            .for_each(|(t, o)| *t = decay * *t + (1.0 - decay) * o);
    }
    Ok(())
}
