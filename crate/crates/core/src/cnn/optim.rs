use serde::{Deserialize, Serialize};

use super::network::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ModelParams) -> Result<Self> {
        cfg.validate()?;
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Ok(Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ModelParams) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.tensors.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::network::{Network, NetworkSpec};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut net = Network::new(NetworkSpec::eeg(4, 3, 2), 0).unwrap();
        let before = net.params.clone();
        for p in &mut net.params.tensors {
            for (i, g) in p.grad.data_mut().iter_mut().enumerate() {
                *g = if i % 2 == 0 { 3.0 } else { -0.01 };
            }
        }
        let mut adam = Adam::new(AdamConfig::default(), &net.params).unwrap();
        adam.step(&mut net.params);
        for (a, b) in before.tensors.iter().zip(&net.params.tensors) {
            for (i, (x, y)) in a.value.data().iter().zip(b.value.data()).enumerate() {
                let want = if i % 2 == 0 { -1e-3 } else { 1e-3 };
                assert!((y - x - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
