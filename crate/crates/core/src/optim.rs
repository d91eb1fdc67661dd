//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> AdamState<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Self {
        AdamState {
            cfg,
            step: 0,
            moments: params
                .iter()
                .map(|(k, t)| (k.clone(), (vec![T::zero(); t.numel()], vec![T::zero(); t.numel()])))
                .collect(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One update of every parameter in `params` from `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<()> {
        for name in params.names() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter {name}")))?;
            let m = self
                .moments
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no optimizer state for parameter {name}")))?;
            if g.numel() != m.0.len() {
                return Err(Error::Dimension(format!("gradient of {name} has the wrong size")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let one = T::one();
        let c1 = T::lit(1.0 - self.cfg.beta1.powi(t));
        let c2 = T::lit(1.0 - self.cfg.beta2.powi(t));
        let eps = T::lit(self.cfg.eps);
        let lr = T::lit(lr);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above").data();
            let (m, v) = self.moments.get_mut(name).expect("checked above");
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
