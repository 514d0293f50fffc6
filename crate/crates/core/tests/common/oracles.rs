//! Independent reference implementations for the metrics suite.

/// Largest dose `d` among the masked values such that at least `m`% of the
/// values are `≥ d`, by scanning every distinct value.
pub fn brute_dose_at_volume(values: &[f64], m_percent: u32) -> f64 {
    let n = values.len() as u64;
    let mut best = f64::NEG_INFINITY;
    for &d in values {
        let count = values.iter().filter(|&&v| v >= d).count() as u64;
        if 100 * count >= m_percent as u64 * n && d > best {
            best = d;
        }
    }
    best
}

pub fn brute_fraction_at_least(values: &[f64], level: f64) -> f64 {
    values.iter().filter(|&&v| v >= level).count() as f64 / values.len() as f64
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// Two-sided p-value of Student's t with `df` degrees of freedom, by
/// integrating the unnormalized density under the substitution `x = tan θ`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let g = |theta: f64| {
        let x = theta.tan();
        let c = theta.cos();
        let v = (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (c * c);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let half = std::f64::consts::FRAC_PI_2;
    let total = simpson(g, 0.0, half, 200_000);
    let tail = simpson(g, t.abs().atan(), half, 200_000);
    tail / total
}
