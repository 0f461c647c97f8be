use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

/// Adam with named first/second moments so its state can be checkpointed.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that received a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let scale = if self.cfg.clip_norm > 0.0 {
            let mut sq = 0.0;
            for (_, var) in params.iter() {
                if let Some(g) = grads.get(var) {
                    sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                }
            }
            let norm = sq.sqrt();
            if norm > self.cfg.clip_norm {
                self.cfg.clip_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        let c1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var) else { continue };
            let g = (g * scale)?;
            let (m, v) = match self.moments.get(name) {
                Some((m, v)) => (
                    ((m * self.cfg.beta1)? + (&g * (1.0 - self.cfg.beta1))?)?,
                    ((v * self.cfg.beta2)? + (g.sqr()? * (1.0 - self.cfg.beta2))?)?,
                ),
                None => ((&g * (1.0 - self.cfg.beta1))?, (g.sqr()? * (1.0 - self.cfg.beta2))?),
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.cfg.eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(())
    }
}
