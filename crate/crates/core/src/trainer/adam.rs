use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grads, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adaptive-moment optimizer state, one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let (inv_c1, inv_c2) = (T::lit(1.0 / c1), T::lit(1.0 / c2));
        let (lr, eps) = (T::lit(lr), T::lit(epsilon));
        for (((p, g), m), v) in params.iter_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m * inv_c1;
                let v_hat = *v * inv_c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Moments as named tensors for checkpointing.
    pub fn state_tensors(&self, params: &[Tensor<T>]) -> Vec<Tensor<T>> {
        let mut out = Vec::with_capacity(2 * params.len());
        for (kind, moments) in [("m", &self.m), ("v", &self.v)] {
            for (p, data) in params.iter().zip(moments) {
                out.push(Tensor { name: format!("adam.{kind}.{}", p.name), shape: p.shape.clone(), data: data.clone() });
            }
        }
        out
    }

    pub fn from_state(config: AdamConfig, step: u64, params: &[Tensor<T>], state: Vec<Tensor<T>>) -> Result<Self> {
        let n = params.len();
        if state.len() != 2 * n {
            return Err(Error::IncompatibleCheckpoint(format!("expected {} optimizer tensors, found {}", 2 * n, state.len())));
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, t) in state.into_iter().enumerate() {
            let p = &params[i % n];
            let kind = if i < n { "m" } else { "v" };
            if t.name != format!("adam.{kind}.{}", p.name) || t.data.len() != p.data.len() {
                return Err(Error::IncompatibleCheckpoint(format!("unexpected optimizer tensor `{}`", t.name)));
            }
            if i < n {
                m.push(t.data)
            } else {
                v.push(t.data)
            }
        }
        Ok(Self { config, step, m, v })
    }
}
