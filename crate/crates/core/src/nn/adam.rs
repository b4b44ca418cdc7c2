//! Adam optimizer with bias correction.

use super::{Grads, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Grads,
    second: Grads,
}

impl Adam {
    /// Standard defaults: beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(lr: f64, net: &Mlp) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Grads::zeros_like(net),
            second: Grads::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Rejects non-finite gradients so a diverged
    /// run aborts with a diagnostic instead of poisoning the parameters.
    pub fn step(&mut self, params: &mut Mlp, grads: &Grads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        if grads.weights.len() != params.layers().len() {
            return Err(Error::DimMismatch {
                context: "adam gradient shape",
                expected: params.layers().len(),
                got: grads.weights.len(),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, layer) in params.layers_mut().iter_mut().enumerate() {
            if layer.weights.len() != grads.weights[k].len()
                || layer.bias.len() != grads.bias[k].len()
            {
                return Err(Error::DimMismatch {
                    context: "adam layer shape",
                    expected: layer.weights.len(),
                    got: grads.weights[k].len(),
                });
            }
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            };
            for ((p, &g), (m, v)) in layer
                .weights
                .iter_mut()
                .zip(&grads.weights[k])
                .zip(self.first.weights[k].iter_mut().zip(&mut self.second.weights[k]))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in layer
                .bias
                .iter_mut()
                .zip(&grads.bias[k])
                .zip(self.first.bias[k].iter_mut().zip(&mut self.second.bias[k]))
            {
                update(p, g, m, v);
            }
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn moments_are_zero(&self) -> bool {
        self.first.is_zero() && self.second.is_zero()
    }
}
