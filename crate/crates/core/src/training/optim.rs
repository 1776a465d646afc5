use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::{ParamStore, Tensor};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1.0 when nothing changed).
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> Result<f64, TrainError> {
    if !(max_norm > 0.0) {
        return Err(TrainError::Config(format!("clip norm must be positive, got {max_norm}")));
    }
    let mut sq = 0.0;
    for (_, p) in store.iter() {
        if let Some(&bad) = p.grad.data().iter().find(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: p.name.clone(),
                value: bad,
            });
        }
        sq += p.grad.data().iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for p in store.iter_mut() {
        for g in p.grad.data_mut() {
            *g *= scale;
        }
    }
    Ok(scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Moments of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamSlot {
    pub steps: u64,
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam with per-parameter step counts. A parameter whose gradient is zero
/// everywhere was not used by the current batch and is left alone, moments included.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub slots: Vec<AdamSlot>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let slots = store
            .iter()
            .map(|(_, p)| AdamSlot {
                steps: 0,
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
            })
            .collect();
        Self { config, slots }
    }

    pub fn update(&mut self, store: &mut ParamStore, lr: f64) -> Result<(), TrainError> {
        if self.slots.len() != store.len() {
            return Err(TrainError::Config(format!(
                "optimizer tracks {} parameters, model has {}",
                self.slots.len(),
                store.len()
            )));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (slot, p) in self.slots.iter_mut().zip(store.iter_mut()) {
            if p.grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            slot.steps += 1;
            let c1 = 1.0 - beta1.powf(slot.steps as f64);
            let c2 = 1.0 - beta2.powf(slot.steps as f64);
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            let grad = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
