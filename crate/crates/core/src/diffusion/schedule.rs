use crate::error::{contract, Result};

/// Per-step noise variances and the quantities derived from them. Steps are
/// 1-based: `beta(1)` is the first forward step, `beta(T)` the last.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of `β_t` from `beta_start` at `t = 1` to
    /// `beta_end` at `t = T`. Either direction is accepted.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        contract!(steps >= 1, "schedule needs at least one step");
        for b in [beta_start, beta_end] {
            contract!(b > 0.0 && b < 1.0, "beta {b} outside (0, 1)");
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// Schedule from explicit per-step variances.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        contract!(!beta.is_empty(), "schedule needs at least one step");
        for &b in &beta {
            contract!(b > 0.0 && b < 1.0, "beta {b} outside (0, 1)");
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let gamma = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            beta,
            alpha,
            gamma,
            sigma,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        contract!(
            t >= 1 && t <= self.steps(),
            "diffusion step {t} outside 1..={}",
            self.steps()
        );
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative `∏_{i≤t} α_i`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t - 1]
    }

    /// Reverse-step noise scale `√(1 − α_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.01, 0.01).unwrap();
        assert_eq!(s.beta(1), 0.01);
        assert_eq!(s.alpha(1), 0.99);
        assert_eq!(s.gamma(1), 0.99);
        assert!((s.sigma(1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn decaying_schedule_endpoints_and_midpoint() {
        let s = NoiseSchedule::linear(1000, 1e-2, 1e-4).unwrap();
        assert!((s.beta(1) - 1e-2).abs() < 1e-15);
        assert!((s.beta(1000) - 1e-4).abs() < 1e-15);
        // 1e-2 + (1e-4 - 1e-2)·499/999
        assert!((s.beta(500) - 5.054_954_954_954_955e-3).abs() < 1e-12);
        assert!((s.beta(500) - 5.054e-3).abs() < 1e-6);
    }

    #[test]
    fn gamma_matches_left_fold_and_decreases() {
        for (t, b0, b1) in [(1000, 1e-2, 1e-4), (200, 1e-4, 2e-2), (50, 0.3, 0.3)] {
            let s = NoiseSchedule::linear(t, b0, b1).unwrap();
            let folded = s.betas().iter().fold(1.0, |acc, b| acc * (1.0 - b));
            assert!(((s.gamma(t) - folded) / folded).abs() < 1e-7);
            for i in 2..=t {
                assert!(s.gamma(i) < s.gamma(i - 1));
                assert!((s.gamma(i) / s.gamma(i - 1) - s.alpha(i)).abs() < 1e-7);
                assert!((s.sigma(i).powi(2) - s.beta(i)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        let s = NoiseSchedule::linear(10, 0.1, 0.1).unwrap();
        assert!(s.check_step(0).is_err() && s.check_step(11).is_err() && s.check_step(10).is_ok());
    }
}
