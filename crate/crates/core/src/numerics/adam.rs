use super::{Float, ParamStore};
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter for Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One Adam update of every parameter in `params`, which must all carry
    /// gradients. Gradients are left in place.
    pub fn step<F: Float>(&mut self, params: &mut ParamStore<F>) -> Result<()> {
        for (name, t) in params.iter() {
            contract!(t.grad.is_some(), "adam: parameter {name} has no gradient");
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        contract!(
            self.first.len() == params.len(),
            "adam: state tracks {} parameters, store has {}",
            self.first.len(),
            params.len()
        );
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            contract!(m.len() == t.len(), "adam: moment buffer shape drifted");
            let grad = t.grad.take().expect("checked above");
            for (((p, &g), m), v) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64().unwrap_or(f64::NAN);
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= F::from_f64_lossy(update);
            }
            t.grad = Some(grad);
        }
        Ok(())
    }
}
