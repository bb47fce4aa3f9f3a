use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &ParamStore) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// Bias-corrected Adam with decoupled weight decay:
/// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(Error::shape(
            "adam_step",
            "gradient or moment count differs from parameters",
        ));
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient of {} has shape {:?}", params.name(id), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {}",
                params.name(id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = state.v[k].data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (state.m[k].data(), state.v[k].data());
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + weight_decay * p[i]);
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
