//! Adam with bias correction.

use super::ParameterVector;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update in place. A non-finite gradient leaves parameters,
    /// moments and the step count untouched.
    pub fn step(&mut self, params: &mut ParameterVector, grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(Error::input(format!(
                "gradient has {} entries, optimizer tracks {}",
                grad.len(),
                self.m.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite gradient, update skipped"));
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
