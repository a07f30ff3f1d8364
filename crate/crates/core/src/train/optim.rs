//! Adaptive moment estimation with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{ModelState, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied as `p -= weight_decay * p` every step, independent of the
    /// learning rate, to every parameter.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamConfig,
    state: OptimizerState,
}

impl AdamW {
    pub fn new(config: AdamConfig, model: &ModelState) -> Self {
        let zeros = |t: &crate::tensor::Tensor<f32>| vec![0.0f32; t.numel()];
        let first: BTreeMap<_, _> = model.params().iter().map(|(n, t)| (n.clone(), zeros(t))).collect();
        Self {
            config,
            state: OptimizerState {
                step: 0,
                second: first.clone(),
                first,
            },
        }
    }

    pub fn from_state(config: AdamConfig, state: OptimizerState) -> Self {
        Self { config, state }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// One update at learning rate `lr`.
    pub fn step(&mut self, model: &mut ModelState, grads: &BTreeMap<String, Vec<f32>>, lr: f64) {
        let c = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in model.params_mut() {
            let (Some(g), Some(m), Some(v)) = (grads.get(name), self.state.first.get_mut(name), self.state.second.get_mut(name)) else {
                continue;
            };
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                let mn = c.beta1 * *m as f64 + (1.0 - c.beta1) * g;
                let vn = c.beta2 * *v as f64 + (1.0 - c.beta2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let update = (mn / bc1) / ((vn / bc2).sqrt() + c.eps);
                let mut x = *p as f64;
                if c.weight_decay != 0.0 {
                    x -= c.weight_decay * x;
                }
                if lr != 0.0 {
                    x -= lr * update;
                }
                *p = x as f32;
            }
        }
    }
}
