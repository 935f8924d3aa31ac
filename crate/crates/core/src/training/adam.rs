use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, TrainingError};
use crate::model::HistnModel;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// One bias-corrected Adam update of `params` in place; `t` is the 1-based
/// step index after increment.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
) {
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam state for the parameters that were trainable when it was created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub lr: f64,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimState {
    pub fn new(model: &HistnModel, lr: f64) -> Self {
        let moments = model
            .trainable()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    Moments {
                        m: vec![0.0; t.len()],
                        v: vec![0.0; t.len()],
                    },
                )
            })
            .collect();
        Self {
            lr,
            step: 0,
            moments,
        }
    }

    /// Applies the gradients accumulated on the model's trainable leaves.
    /// Parameters that received no gradient are treated as having zero
    /// gradient.
    pub fn step(&mut self, model: &mut HistnModel) -> Result<()> {
        let mut updates = Vec::with_capacity(self.moments.len());
        for (name, _) in &self.moments {
            let tensor = model
                .param(name)
                .ok_or_else(|| TrainingError::Config(format!("unknown parameter {name}")))?;
            let grad = tensor.grad().unwrap_or_else(|| vec![0.0; tensor.len()]);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainingError::NonFiniteGradient(name.clone()));
            }
            updates.push((name.clone(), tensor.values().to_vec(), grad));
        }
        self.step += 1;
        for (name, mut values, grad) in updates {
            let mo = self.moments.get_mut(&name).expect("moment per parameter");
            adam_update(&mut values, &grad, &mut mo.m, &mut mo.v, self.step, self.lr);
            model.set_values(&name, values)?;
        }
        Ok(())
    }
}
