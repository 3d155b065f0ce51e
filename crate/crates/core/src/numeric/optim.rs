//! AdamW with decoupled weight decay.

use super::{Module, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates, one pair per parameter in visit order.
#[derive(Debug, Clone, Default)]
pub struct AdamWState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update of every trainable parameter of `module`.
///
/// Frozen parameters are left untouched, as is their moment state.
pub fn adamw_step<M: Module + ?Sized>(module: &mut M, cfg: &AdamWConfig, state: &mut AdamWState) {
    let mut params = module.named_params_mut();
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
    }
    assert_eq!(state.m.len(), params.len(), "optimizer state belongs to another module");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data().to_vec();
        let w = p.value.data_mut();
        for j in 0..w.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            w[j] -= cfg.lr * cfg.weight_decay * w[j];
            w[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}
