//! Denoising diffusion: the noise schedule, the closed-form and stepwise
//! forward process, the reverse chain, and the ε-prediction training step.

mod process;
mod schedule;
mod training;

pub use process::{
    forward_sample, forward_sample_batch, forward_step, posterior_mean, reverse_step, sample, standard_normal,
};
pub use schedule::NoiseSchedule;
pub use training::{diffusion_loss, training_step, DiffusionSample};

use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::Result;

/// A conditional noise predictor `ε̂ = f(g(x), y_t, γ_t)` together with its
/// structure encoder `g`.
pub trait NoiseModel {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records `g(x)` and returns the conditioning features.
    fn encode(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>>;

    /// Records the noise prediction for `y_t` at per-sample noise levels
    /// `gamma`.
    fn predict(&self, g: &mut Graph, features: &[Var], y_t: Var, gamma: &[f64]) -> Result<Var>;
}

/// Affine map between dose units `[0, max_dose]` and the model's working
/// range `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseScale {
    pub max_dose: f64,
}

impl DoseScale {
    pub fn new(max_dose: f64) -> Self {
        Self { max_dose }
    }

    pub fn normalize(&self, dose: &Tensor) -> Tensor {
        let s = (2.0 / self.max_dose) as f32;
        dose.map(|d| d * s - 1.0)
    }

    /// Inverse of [`normalize`](Self::normalize), clamped to the valid dose
    /// range.
    pub fn denormalize(&self, y: &Tensor) -> Tensor {
        let half = (self.max_dose / 2.0) as f32;
        let max = self.max_dose as f32;
        y.map(|v| ((v + 1.0) * half).clamp(0.0, max))
    }
}
