use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One adaptive-moment update with decoupled weight decay, then clears
    /// the gradients. Fails if nothing was accumulated since the last step.
    pub fn step(&self, params: &mut ParameterStore) -> Result<()> {
        if !params.has_grad {
            let name = params
                .params
                .first()
                .map(|p| p.name.clone())
                .unwrap_or_default();
            return Err(Error::MissingGradient { name });
        }
        params.step += 1;
        let t = params.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for p in &mut params.params {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = p.grad[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                values[i] -= self.lr * (mhat / (libm::sqrt(vhat) + self.eps) + wd * values[i]);
            }
        }
        params.zero_grad();
        Ok(())
    }
}

/// Single AdamW update at the given rate and decay.
pub fn optimizer_step(params: &mut ParameterStore, lr: f64, weight_decay: f64) -> Result<()> {
    AdamW::new(lr, weight_decay).step(params)
}
