//! Bias-corrected Adam.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BETA1: f64 = 0.5;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_betas(len, DEFAULT_BETA1, DEFAULT_BETA2)
    }

    pub fn with_betas(len: usize, beta1: f64, beta2: f64) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1, beta2, eps: DEFAULT_EPS }
    }

    /// Returns the updated parameter values; on error `self` is untouched.
    pub fn update(&mut self, param: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
        if param.len() != grad.len() || param.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                alloc::format!("param {}, grad {}, state {}", param.len(), grad.len(), self.m.len()),
            ));
        }
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::invalid(alloc::format!("learning rate must be positive, got {lr}")));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam_step gradient"));
        }
        let t = self.t + 1;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let mut out = Vec::with_capacity(param.len());
        for i in 0..param.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            out.push(param[i] - lr * mhat / (libm::sqrt(vhat) + self.eps));
        }
        self.t = t;
        Ok(out)
    }
}

/// Functional form: returns the new parameter leaf and state.
pub fn adam_step(param: &Tensor, grad: &[f64], state: &AdamState, lr: f64) -> Result<(Tensor, AdamState)> {
    let mut next = state.clone();
    let values = next.update(param.data(), grad, lr)?;
    let p = if param.requires_grad() { Tensor::param(param.shape(), values)? } else { Tensor::new(param.shape(), values)? };
    Ok((p, next))
}
