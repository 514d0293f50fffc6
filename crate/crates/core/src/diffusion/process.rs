use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{NoiseModel, NoiseSchedule};
use crate::error::{contract, Result};
use crate::numerics::{Float, Graph, Tensor, Var};

pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn affine<F: Float>(a: &Tensor<F>, ca: f64, b: &Tensor<F>, cb: f64) -> Result<Tensor<F>> {
    a.zip_map(b, |x, y| F::from_f64_lossy(ca * x.to_f64().unwrap_or(f64::NAN) + cb * y.to_f64().unwrap_or(f64::NAN)))
}

/// Closed-form marginal draw `y_t = √γ_t·y₀ + √(1−γ_t)·ε`.
pub fn forward_sample<F: Float>(y0: &Tensor<F>, t: usize, epsilon: &Tensor<F>, sched: &NoiseSchedule) -> Result<Tensor<F>> {
    sched.check_step(t)?;
    let g = sched.gamma(t);
    affine(y0, g.sqrt(), epsilon, (1.0 - g).sqrt())
}

/// [`forward_sample`] with an independent step per leading-axis element.
pub fn forward_sample_batch(y0: &Tensor, steps: &[usize], epsilon: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    contract!(
        y0.shape() == epsilon.shape(),
        "noise shape {:?} differs from data shape {:?}",
        epsilon.shape(),
        y0.shape()
    );
    contract!(
        y0.rank() >= 1 && y0.shape()[0] == steps.len(),
        "{} steps for a batch of shape {:?}",
        steps.len(),
        y0.shape()
    );
    let per = y0.len() / steps.len().max(1);
    let mut out = Vec::with_capacity(y0.len());
    for (i, &t) in steps.iter().enumerate() {
        sched.check_step(t)?;
        let g = sched.gamma(t);
        let (a, b) = (g.sqrt(), (1.0 - g).sqrt());
        let range = i * per..(i + 1) * per;
        out.extend(
            y0.data()[range.clone()]
                .iter()
                .zip(&epsilon.data()[range])
                .map(|(&y, &e)| (a * y as f64 + b * e as f64) as f32),
        );
    }
    Tensor::new(y0.shape(), out)
}

/// One Markov step `y_t = √α_t·y_{t−1} + √(1−α_t)·ε`.
pub fn forward_step<F: Float>(y_prev: &Tensor<F>, t: usize, epsilon: &Tensor<F>, sched: &NoiseSchedule) -> Result<Tensor<F>> {
    sched.check_step(t)?;
    let a = sched.alpha(t);
    affine(y_prev, a.sqrt(), epsilon, (1.0 - a).sqrt())
}

/// Learned reverse mean `(y_t − (1−α_t)/√(1−γ_t)·ε̂) / √α_t`.
pub fn posterior_mean<F: Float>(y_t: &Tensor<F>, eps_hat: &Tensor<F>, t: usize, sched: &NoiseSchedule) -> Result<Tensor<F>> {
    sched.check_step(t)?;
    let (a, g) = (sched.alpha(t), sched.gamma(t));
    let inv = 1.0 / a.sqrt();
    affine(y_t, inv, eps_hat, -inv * (1.0 - a) / (1.0 - g).sqrt())
}

/// `posterior_mean + σ_t·z`. Callers pass `z = 0` at `t = 1`.
pub fn reverse_step<F: Float>(
    y_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    z: &Tensor<F>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    let mean = posterior_mean(y_t, eps_hat, t, sched)?;
    affine(&mean, 1.0, z, sched.sigma(t))
}

/// Runs the full reverse chain from `y_T ~ N(0, I)` down to a `y₀` estimate
/// conditioned on structure images `x: [N, C, H, W]`. The final step adds no
/// noise. Deterministic given the generator state.
pub fn sample<M: NoiseModel + ?Sized, R: Rng + ?Sized>(
    x: &Tensor,
    model: &M,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let (n, _, h, w) = x.dims4()?;
    let features: Vec<Tensor> = {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let feats = model.encode(&mut g, xv)?;
        feats.iter().map(|v| g.value(*v).clone()).collect()
    };
    let shape = [n, 1, h, w];
    let mut y = standard_normal(&shape, rng);
    for t in (1..=sched.steps()).rev() {
        let mut g = Graph::new();
        let fv: Vec<Var> = features.iter().map(|f| g.constant(f.clone())).collect();
        let yv = g.constant(y.clone());
        let eps = model.predict(&mut g, &fv, yv, &vec![sched.gamma(t); n])?;
        let z = if t > 1 {
            standard_normal(&shape, rng)
        } else {
            Tensor::zeros(&shape)
        };
        y = reverse_step(&y, g.value(eps), &z, t, sched)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f32) -> Tensor {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_noise_forward_sample_scales_data() {
        let s = NoiseSchedule::linear(20, 1e-2, 1e-4).unwrap();
        let y0 = Tensor::new(&[3], vec![1.0, -0.5, 0.25]).unwrap();
        let out = forward_sample(&y0, 7, &Tensor::zeros(&[3]), &s).unwrap();
        let k = s.gamma(7).sqrt();
        for (o, y) in out.data().iter().zip(y0.data()) {
            assert!((*o as f64 - k * *y as f64).abs() < 1e-7);
        }
        assert!(forward_sample(&y0, 0, &y0, &s).is_err());
        assert!(forward_sample(&y0, 21, &y0, &s).is_err());
    }

    #[test]
    fn tiny_betas_leave_data_nearly_unchanged() {
        let s = NoiseSchedule::linear(10, 1e-9, 1e-9).unwrap();
        let y0 = scalar(0.8);
        let out = forward_sample(&y0, 10, &scalar(1.0), &s).unwrap();
        assert!((out.data()[0] - 0.8).abs() < 1e-3);
        let step = forward_step(&y0, 3, &scalar(0.0), &s).unwrap();
        assert!((step.data()[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn forward_step_scalar() {
        let s = NoiseSchedule::linear(1, 0.01, 0.01).unwrap();
        let out = forward_step(&scalar(1.0), 1, &scalar(0.0), &s).unwrap();
        assert!((out.data()[0] as f64 - 0.99f64.sqrt()).abs() < 1e-7);
        assert!((out.data()[0] - 0.994_987).abs() < 1e-6);
    }

    #[test]
    fn posterior_mean_values() {
        let s = NoiseSchedule::linear(30, 2e-2, 1e-3).unwrap();
        let y = Tensor::new(&[2], vec![0.3, -1.2]).unwrap();
        let m = posterior_mean(&y, &Tensor::zeros(&[2]), 5, &s).unwrap();
        for (a, b) in m.data().iter().zip(y.data()) {
            assert!((*a as f64 - *b as f64 / s.alpha(5).sqrt()).abs() < 1e-6);
        }
        // α = 0.99, γ = 0.9: second step of a schedule with α₁ = 10/11.
        let s = NoiseSchedule::from_betas(vec![1.0 - 0.9 / 0.99, 0.01]).unwrap();
        assert!((s.gamma(2) - 0.9).abs() < 1e-12);
        let m = posterior_mean(&scalar(1.0), &scalar(1.0), 2, &s).unwrap();
        let oracle = (1.0 - 0.01 / 0.1f64.sqrt()) / 0.99f64.sqrt();
        assert!((m.data()[0] as f64 - oracle).abs() < 1e-6);
        assert!((m.data()[0] - 0.973_25).abs() < 1e-5);
    }

    #[test]
    fn reverse_step_values() {
        let s = NoiseSchedule::linear(10, 0.01, 0.01).unwrap();
        let y = Tensor::new(&[2], vec![0.4, -0.9]).unwrap();
        let e = Tensor::new(&[2], vec![0.1, 0.7]).unwrap();
        assert_eq!(
            reverse_step(&y, &e, &Tensor::zeros(&[2]), 4, &s).unwrap(),
            posterior_mean(&y, &e, 4, &s).unwrap()
        );
        let out = reverse_step(&scalar(0.0), &scalar(0.0), &scalar(1.0), 2, &s).unwrap();
        assert!((out.data()[0] - 0.1).abs() < 1e-7);
        let ident = NoiseSchedule::linear(3, 1e-12, 1e-12).unwrap();
        let out = reverse_step(&y, &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), 2, &ident).unwrap();
        assert!(out.max_abs_diff(&y).unwrap() < 1e-6);
    }

    #[test]
    fn first_step_reconstructs_data() {
        let s = NoiseSchedule::linear(50, 5e-2, 5e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y0 = standard_normal(&[4, 1, 4, 4], &mut rng);
        let eps = standard_normal(&[4, 1, 4, 4], &mut rng);
        let yt = forward_sample(&y0, 1, &eps, &s).unwrap();
        let back = reverse_step(&yt, &eps, &Tensor::zeros(y0.shape()), 1, &s).unwrap();
        assert!(back.max_abs_diff(&y0).unwrap() < 1e-5);
    }

    #[test]
    fn batch_forward_uses_per_element_steps() {
        let s = NoiseSchedule::linear(10, 0.1, 0.01).unwrap();
        let y0 = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eps = Tensor::new(&[2, 2], vec![0.5, -0.5, 0.25, 0.0]).unwrap();
        let out = forward_sample_batch(&y0, &[2, 9], &eps, &s).unwrap();
        let a = forward_sample(&y0.select(0).unwrap(), 2, &eps.select(0).unwrap(), &s).unwrap();
        let b = forward_sample(&y0.select(1).unwrap(), 9, &eps.select(1).unwrap(), &s).unwrap();
        assert_eq!(&out.data()[..2], a.data());
        assert_eq!(&out.data()[2..], b.data());
        assert!(forward_sample_batch(&y0, &[1], &eps, &s).is_err());
    }
}
