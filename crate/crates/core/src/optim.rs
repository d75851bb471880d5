//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Grads, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, cfg: AdamConfig) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("learning_rate", format!("{lr} must be positive")));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) || !(cfg.eps > 0.0) {
            return Err(Error::config("adam", "betas must lie in [0, 1) and eps be positive"));
        }
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        Ok(Self { cfg, lr, step: 0, m: zeros.clone(), v: zeros })
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for ((id, g), (m, v)) in grads.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let p = params.get_mut(id);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut params = ParamStore::new();
        let id = params.register("x", vec![2], vec![1.0, -1.0]);
        let mut grads = Grads::zeros_like(&params);
        grads.accumulate(id, &[3.0, -0.5]);
        let mut adam = Adam::new(&params, 0.1, AdamConfig::default()).unwrap();
        adam.step(&mut params, &grads);
        let p = params.get(id);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut params = ParamStore::new();
        let id = params.register("x", vec![1], vec![5.0]);
        let mut adam = Adam::new(&params, 0.1, AdamConfig::default()).unwrap();
        for _ in 0..500 {
            let mut g = Grads::zeros_like(&params);
            g.accumulate(id, &[2.0 * params.get(id)[0]]);
            adam.step(&mut params, &g);
        }
        assert!(params.get(id)[0].abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(Adam::new(&ParamStore::new(), 0.0, AdamConfig::default()).is_err());
    }
}
