use serde::{Deserialize, Serialize};

use super::{Module, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimiser state for one [`Module`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new<M: Module>(model: &M, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = model.named_params().iter().map(|(_, t)| t.zeros_like()).collect();
        Adam {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn step<M: Module>(&mut self, params: &mut M, grads: &M) -> Result<()> {
        let grads: Vec<(String, &Tensor)> = grads.named_params();
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::TrainingDiverged(format!("non-finite gradient in {name}")));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, (_, g)), m), v) in params.params_mut().into_iter().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
