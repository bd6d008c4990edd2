//! AdamW with decoupled weight decay.

use crate::nd::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimiser state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    steps: u32,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        AdamW { cfg, m: zeros(), v: zeros(), steps: 0 }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// One update: `p ← p − lr·(wd·p + m̂ / (√v̂ + ε))`, with the decay applied
    /// to the pre-update value.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape("optimiser, parameter and gradient lists differ"));
        }
        self.steps += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("gradient {i} does not match its parameter")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (x, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *x -= lr * (weight_decay * *x + update);
            }
        }
        Ok(())
    }
}
