//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Float, Tensor};

/// Normal samples with standard deviation `std`, redrawn outside ±2σ.
pub fn truncated_normal<F: Float, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<F> {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            break F::from_f64_lossy(z * std);
        }
    })
}

/// Conv or linear weight with fan-in scaling: `std = 1/√fan_in`, where the
/// fan-in is the product of all but the leading dimension.
pub fn fan_in<F: Float, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<F> {
    let fan: usize = shape[1..].iter().product();
    truncated_normal(shape, 1.0 / (fan.max(1) as f64).sqrt(), rng)
}
