//! Named parameter tensors with AdamW optimizer state.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One trainable tensor plus its first/second moment estimates.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        }
    }
}

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters in deterministic (sorted) order.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, Param>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Adam time step (number of updates applied so far).
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Restores a checkpointed parameter with its optimizer state.
    pub fn restore(&mut self, name: &str, value: Tensor, m: Tensor, v: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if value.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "checkpointed {name} has shape {:?}, expected {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        if m.shape() != value.shape() || v.shape() != value.shape() {
            return Err(Error::shape(format!("optimizer state shape differs for {name}")));
        }
        *p = Param { value, m, v };
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// One decoupled-weight-decay Adam update over the provided gradients.
    ///
    /// Parameters without a gradient entry are left untouched (their moments
    /// are not advanced either). Math runs in f64 per element.
    pub fn adamw_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamWConfig) -> Result<()> {
        for name in grads.keys() {
            if !self.entries.contains_key(name) {
                return Err(Error::invalid(format!("gradient for unknown parameter {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, grad) in grads {
            let param = self.entries.get_mut(name).expect("checked above");
            if grad.shape() != param.value.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} for {name} differs from parameter {:?}",
                    grad.shape(),
                    param.value.shape()
                )));
            }
            let g = grad.data();
            let pv = param.value.data_mut();
            let mv = param.m.data_mut();
            let vv = param.v.data_mut();
            for i in 0..g.len() {
                let gi = g[i] as f64;
                let m = cfg.beta1 * mv[i] as f64 + (1.0 - cfg.beta1) * gi;
                let v = cfg.beta2 * vv[i] as f64 + (1.0 - cfg.beta2) * gi * gi;
                mv[i] = m as f32;
                vv[i] = v as f32;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let p = pv[i] as f64;
                pv[i] = (p - cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p))
                    as f32;
            }
        }
        Ok(())
    }
}
