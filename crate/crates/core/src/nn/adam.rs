use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, CabiError, Result};
use crate::nn::{DenseNet, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam moment accumulators for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_net(net: &DenseNet, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = net
            .layers()
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Self::new(&shapes, config)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over parallel parameter/gradient slices.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        ensure_dim(self.m.len(), params.len())?;
        ensure_dim(self.m.len(), grads.len())?;
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            ensure_dim(m.len(), p.len())?;
            ensure_dim(m.len(), g.len())?;
        }
        if !grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
            return Err(CabiError::NonFinite("gradient".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        let g = grads.slices();
        let mut p = net.param_slices_mut();
        self.step_slices(&mut p, &g)
    }
}
