use serde::{Deserialize, Serialize};

use super::{GradError, Grads, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState) -> Result<(), GradError> {
    if grads.len() != store.len() {
        return Err(GradError::MissingGrads {
            expected: store.len(),
            got: grads.len(),
        });
    }
    if state.m.len() != store.len() {
        return Err(GradError::MissingGrads {
            expected: store.len(),
            got: state.m.len(),
        });
    }
    for id in store.ids() {
        let (p, g) = (store.get(id), grads.get(id));
        if p.shape() != g.shape() || p.shape() != state.m[id.0].shape() {
            return Err(super::shape_err(
                "adam_step",
                format!("{}: param {:?}, grad {:?}", store.name(id), p.shape(), g.shape()),
            ));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id).data();
        let m = state.m[id.0].data_mut();
        let v = state.v[id.0].data_mut();
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
