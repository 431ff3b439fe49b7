use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use super::Tensor;
use crate::error::{MmclError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(store: &ParamStore, hyper: AdamHyper) -> Self {
        let zeros = |s: &ParamStore| {
            s.iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        AdamState {
            step: 0,
            m: zeros(store),
            v: zeros(store),
            hyper,
        }
    }
}

/// One bias-corrected Adam update over the whole store. Parameters absent
/// from `grads` see a zero gradient.
pub fn adam_step(store: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(MmclError::Invalid(format!(
            "adam state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for (id, g) in grads.iter() {
        let p = store.param(id);
        if g.shape() != p.value.shape() {
            return Err(MmclError::shape(
                "adam_step",
                format!(
                    "gradient {:?} for parameter '{}' of shape {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                ),
            ));
        }
        if !g.is_finite() {
            return Err(MmclError::NonFinite(format!(
                "gradient of parameter '{}'",
                p.name
            )));
        }
    }

    state.step += 1;
    let AdamHyper {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let grad = grads.get(id);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = store.get_mut(id).data_mut();
        for j in 0..w.len() {
            let g = grad.map(|g| g.data()[j]).unwrap_or(0.0);
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            w[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
