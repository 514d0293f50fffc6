//! Noise schedule and forward process: the decaying schedule at desk and
//! full scale, the closed-form marginal against iterated Markov steps, and
//! the empirical moments of many scalar chains.
//!
//! cargo run --release --example forward_process

use diffdp::diffusion::{forward_sample, forward_step, posterior_mean, NoiseSchedule};
use diffdp::numerics::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> diffdp::Result<()> {
    for (name, sched) in [
        ("desk  T=200 ", NoiseSchedule::linear(200, 5e-2, 5e-4)?),
        ("full T=1000", NoiseSchedule::linear(1000, 1e-2, 1e-4)?),
    ] {
        let t = sched.steps();
        println!(
            "{name}: beta_1 {:.1e} beta_T {:.1e}  gamma at T/10 {:.3e}  gamma_T {:.3e}",
            sched.beta(1),
            sched.beta(t),
            sched.gamma(t / 10),
            sched.gamma(t)
        );
    }

    let sched = NoiseSchedule::linear(200, 5e-2, 5e-4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 10_000;
    let y0 = 0.8;
    let mut chain = Tensor::<f64>::full(&[draws], y0);
    println!("\n   t   mean   expected   var   expected");
    for t in 1..=sched.steps() {
        let eps = Tensor::from_fn(&[draws], |_| StandardNormal.sample(&mut rng));
        chain = forward_step(&chain, t, &eps, &sched)?;
        if [1, 5, 20, 50, 200].contains(&t) {
            let mean = chain.mean_f64();
            let var = chain.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let g = sched.gamma(t);
            println!("{t:4} {mean:7.4} {:9.4} {var:6.4} {:9.4}", g.sqrt() * y0, 1.0 - g);
        }
    }

    let zero = Tensor::<f64>::zeros(&[1]);
    let mut y = Tensor::full(&[1], y0);
    for t in 1..=sched.steps() {
        y = forward_step(&y, t, &zero, &sched)?;
    }
    let closed = forward_sample(&Tensor::full(&[1], y0), sched.steps(), &zero, &sched)?;
    println!("\nnoise-free chain vs closed form at T: {:.3e}", y.max_abs_diff(&closed)?);

    let eps = Tensor::<f64>::full(&[1], 0.3);
    let y1 = forward_sample(&Tensor::full(&[1], y0), 1, &eps, &sched)?;
    let back = posterior_mean(&y1, &eps, 1, &sched)?;
    println!("t=1 reverse mean with the true noise: {:.12} (y0 = {y0})", back.data()[0]);
    Ok(())
}
