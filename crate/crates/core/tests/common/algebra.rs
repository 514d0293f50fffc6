//! Diffusion identities checked against direct arithmetic.

use diffdp::diffusion::{forward_sample, forward_step, posterior_mean, NoiseSchedule};
use diffdp::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn schedules() -> Vec<(&'static str, NoiseSchedule)> {
    vec![
        ("desk", NoiseSchedule::linear(200, 5e-2, 5e-4).unwrap()),
        ("full", NoiseSchedule::linear(1000, 1e-2, 1e-4).unwrap()),
        ("increasing", NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap()),
    ]
}

fn normal(n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(&[n], |_| StandardNormal.sample(rng))
}

/// Max deviation between `T` noise-free Markov steps and the closed-form
/// marginal, over every intermediate `t`.
pub fn iterated_vs_closed_form(sched: &NoiseSchedule, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = Tensor::<f64>::from_fn(&[64], |_| rng.random_range(-1.0..1.0));
    let zero = Tensor::zeros(&[64]);
    let mut y = y0.clone();
    let mut worst = 0.0f64;
    for t in 1..=sched.steps() {
        y = forward_step(&y, t, &zero, sched).unwrap();
        let closed = forward_sample(&y0, t, &zero, sched).unwrap();
        worst = worst.max(y.max_abs_diff(&closed).unwrap());
    }
    worst
}

pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub expected_mean: f64,
    pub expected_var: f64,
    pub std_err: f64,
}

impl Moments {
    pub fn mean_ok(&self) -> bool {
        (self.mean - self.expected_mean).abs() <= 3.0 * self.std_err
    }

    pub fn var_ok(&self) -> bool {
        (self.var / self.expected_var - 1.0).abs() <= 0.1
    }
}

/// `draws` independent scalar chains from `y0`, run with fresh noise
/// through `t` Markov steps.
pub fn forward_moments(sched: &NoiseSchedule, y0: f64, t: usize, draws: usize, seed: u64) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Tensor::full(&[draws], y0);
    for s in 1..=t {
        let eps = normal(draws, &mut rng);
        y = forward_step(&y, s, &eps, sched).unwrap();
    }
    let n = draws as f64;
    let mean = y.sum_f64() / n;
    let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let g = sched.gamma(t);
    Moments {
        mean,
        var,
        expected_mean: g.sqrt() * y0,
        expected_var: 1.0 - g,
        std_err: ((1.0 - g) / n).sqrt(),
    }
}

/// With the true noise as the prediction, the `t = 1` reverse mean recovers
/// `y₀`. Returns the max deviation.
pub fn t1_reconstruction(sched: &NoiseSchedule, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = Tensor::<f64>::from_fn(&[256], |_| rng.random_range(-1.0..1.0));
    let eps = normal(256, &mut rng);
    let y1 = forward_sample(&y0, 1, &eps, sched).unwrap();
    let back = posterior_mean(&y1, &eps, 1, sched).unwrap();
    let worst = back.max_abs_diff(&y0).unwrap();
    // The same identity in the f32 working precision.
    let (y0f, epsf) = (y0.cast::<f32>(), eps.cast::<f32>());
    let y1f = forward_sample(&y0f, 1, &epsf, sched).unwrap();
    let backf = posterior_mean(&y1f, &epsf, 1, sched).unwrap();
    worst.max(backf.max_abs_diff(&y0f).unwrap())
}
