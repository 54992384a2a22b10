use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptState {
    pub fn new<S: Scalar>(params: &ModelParams<S>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.tensor.len()]).collect();
        OptState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Learning rate for a 0-based epoch: `lr0` halved once per milestone reached.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = cfg.lr_halve_epochs.iter().filter(|&&m| epoch >= m).count();
    cfg.lr0 * libm::pow(0.5, halvings as f64)
}

pub fn global_norm(grads: &[Option<Vec<f64>>]) -> f64 {
    libm::sqrt(grads.iter().flatten().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>())
}

/// Scale all gradients by `max_norm / ‖g‖` when `‖g‖ > max_norm`. Returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Bias-corrected Adam update. Tensors without a gradient (frozen groups)
/// and their moments are left untouched.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &[Option<Vec<f64>>],
    state: &mut OptState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.tensors().len() {
        bail!(Contract, "{} gradients for {} parameter tensors", grads.len(), params.tensors().len());
    }
    for (g, t) in grads.iter().zip(params.tensors()) {
        if let Some(g) = g {
            if g.len() != t.tensor.len() {
                bail!(Contract, "gradient of {} has {} entries, expected {}", t.name, g.len(), t.tensor.len());
            }
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                bail!(Divergence, "gradient of {}[{i}] is {}", t.name, g[i]);
            }
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for (i, nt) in params.tensors_mut().iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in nt.tensor.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let update = lr * (m[j] / c1) / (libm::sqrt(v[j] / c2) + cfg.eps);
            *p = S::from_f64(p.as_f64() - update);
        }
    }
    Ok(())
}
