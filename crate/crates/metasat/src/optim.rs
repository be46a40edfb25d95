//! Adaptive-moment gradient descent over flat vectors and parameter stores.

use indexmap::IndexMap;

use crate::error::Result;
use crate::params::{GradMap, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 1e-3;
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam over a flat coordinate vector.
#[derive(Debug, Clone)]
pub struct AdamVec {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamVec {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for j in 0..params.len() {
            self.m[j] = BETA1 * self.m[j] + (1.0 - BETA1) * grads[j];
            self.v[j] = BETA2 * self.v[j] + (1.0 - BETA2) * grads[j] * grads[j];
            let m_hat = self.m[j] / bc1;
            let v_hat = self.v[j] / bc2;
            params[j] -= self.lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Adam over the tensors of a parameter store, with per-id moments.
#[derive(Debug, Clone)]
pub struct AdamStore {
    lr: f64,
    m: IndexMap<ParamId, Tensor>,
    v: IndexMap<ParamId, Tensor>,
    t: u64,
}

impl AdamStore {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let mut m = IndexMap::new();
        let mut v = IndexMap::new();
        for (id, tensor) in params.iter() {
            m.insert(id, Tensor::zeros_like(tensor));
            v.insert(id, Tensor::zeros_like(tensor));
        }
        Self { lr, m, v, t: 0 }
    }

    /// Applies one update to the listed ids using the given gradients.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap, ids: &[ParamId]) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for &id in ids {
            let grad = grads
                .get(&id)
                .ok_or_else(|| crate::error::Error::Usage(format!("no gradient for `{id}`")))?;
            let m = self.m.get_mut(&id).expect("moment buffers cover all ids");
            let v = self.v.get_mut(&id).expect("moment buffers cover all ids");
            let theta = params.get_mut(id)?;
            for j in 0..theta.len() {
                let g = grad.data()[j];
                let mj = BETA1 * m.data()[j] + (1.0 - BETA1) * g;
                let vj = BETA2 * v.data()[j] + (1.0 - BETA2) * g * g;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                theta.data_mut()[j] -= self.lr * (mj / bc1) / ((vj / bc2).sqrt() + EPS);
            }
        }
        Ok(())
    }
}
