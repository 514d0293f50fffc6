use rand::Rng;

use super::{forward_sample_batch, standard_normal, NoiseModel, NoiseSchedule};
use crate::error::{contract, Error, Result};
use crate::numerics::{AdamState, Graph, Tensor};

/// A noised batch: `y_t` together with the steps and the noise that made it.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub y_t: Tensor,
    pub steps: Vec<usize>,
    pub epsilon: Tensor,
}

impl DiffusionSample {
    /// Draws `t ~ U{1..T}` per batch element and `ε ~ N(0, I)`, then noises
    /// `y0` in closed form.
    pub fn draw<R: Rng + ?Sized>(y0: &Tensor, sched: &NoiseSchedule, rng: &mut R) -> Result<Self> {
        let (n, ..) = y0.dims4()?;
        let steps: Vec<usize> = (0..n).map(|_| rng.random_range(1..=sched.steps())).collect();
        let epsilon = standard_normal(y0.shape(), rng);
        let y_t = forward_sample_batch(y0, &steps, &epsilon, sched)?;
        Ok(Self { y_t, steps, epsilon })
    }
}

fn record_loss<M: NoiseModel + ?Sized>(
    g: &mut Graph,
    x: &Tensor,
    noised: &DiffusionSample,
    model: &M,
    sched: &NoiseSchedule,
) -> Result<crate::numerics::Var> {
    let xv = g.constant(x.clone());
    let yv = g.constant(noised.y_t.clone());
    let features = model.encode(g, xv)?;
    let gammas: Vec<f64> = noised.steps.iter().map(|&t| sched.gamma(t)).collect();
    let eps_hat = model.predict(g, &features, yv, &gammas)?;
    let target = g.constant(noised.epsilon.clone());
    g.mean_abs_diff(eps_hat, target)
}

fn check_batch(x: &Tensor, y0: &Tensor) -> Result<()> {
    let (n, ..) = x.dims4()?;
    let (ny, cy, ..) = y0.dims4()?;
    contract!(
        n == ny && cy == 1,
        "structure batch {:?} does not pair with dose batch {:?}",
        x.shape(),
        y0.shape()
    );
    Ok(())
}

/// One optimization step on the ε-prediction objective
/// `mean |f(g(x), y_t, γ_t) − ε|`. Returns the loss before the update.
pub fn training_step<M: NoiseModel + ?Sized, R: Rng + ?Sized>(
    x: &Tensor,
    y0: &Tensor,
    model: &mut M,
    sched: &NoiseSchedule,
    opt: &mut AdamState,
    rng: &mut R,
) -> Result<f64> {
    check_batch(x, y0)?;
    let noised = DiffusionSample::draw(y0, sched, rng)?;
    let mut g = Graph::new();
    let loss = record_loss(&mut g, x, &noised, model, sched)?;
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite diffusion loss {value} after {} optimizer steps",
            opt.step_count()
        )));
    }
    let grads = g.backward(loss)?;
    drop(g);
    model.params_mut().set_grads(&grads);
    opt.step(model.params_mut())?;
    Ok(value)
}

/// The training objective evaluated without an update.
pub fn diffusion_loss<M: NoiseModel + ?Sized, R: Rng + ?Sized>(
    x: &Tensor,
    y0: &Tensor,
    model: &M,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    check_batch(x, y0)?;
    let noised = DiffusionSample::draw(y0, sched, rng)?;
    let mut g = Graph::new();
    let loss = record_loss(&mut g, x, &noised, model, sched)?;
    Ok(g.value(loss).data()[0] as f64)
}
