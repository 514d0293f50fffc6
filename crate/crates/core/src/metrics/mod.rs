//! Dose-volume metrics, DVH curves, paired t-tests, the high-frequency
//! energy score, and the per-case evaluation report.

mod report;
mod spectral;
mod svg;

pub use report::{curves_csv, evaluate, CaseCurves, CaseRow, DoseReport, EvalCase, MetricComparison, METRIC_NAMES};
pub use spectral::{gaussian_blur, hf_energy_ratio, LOW_BAND_RADIUS};
pub use svg::dvh_svg;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{contract, Result};
use crate::numerics::Tensor;

fn masked_values(dose: &Tensor, mask: &Tensor) -> Result<Vec<f64>> {
    contract!(
        dose.len() == mask.len(),
        "dose has {} voxels but mask has {}",
        dose.len(),
        mask.len()
    );
    let v: Vec<f64> = dose
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m > 0.5)
        .map(|(&d, _)| d as f64)
        .collect();
    contract!(!v.is_empty(), "mask selects no voxels");
    Ok(v)
}

/// Rank (0-based, in descending order) of `D_m` among `n` voxels.
fn coverage_index(m: f64, n: usize) -> usize {
    let k = (m * n as f64 / 100.0 - 1e-9).ceil() as usize;
    k.clamp(1, n) - 1
}

fn dm_sorted_desc(sorted: &[f64], m: f64) -> f64 {
    sorted[coverage_index(m, sorted.len())]
}

/// `D_m`: the largest dose that at least `m`% of the masked voxels receive.
pub fn dose_at_volume(dose: &Tensor, mask: &Tensor, m: f64) -> Result<f64> {
    contract!(m > 0.0 && m <= 100.0, "volume percentage {m} outside (0, 100]");
    let mut v = masked_values(dose, mask)?;
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(dm_sorted_desc(&v, m))
}

/// Denominator of the homogeneity index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HiDivisor {
    D50,
    Prescription(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseSummary {
    pub d98: f64,
    pub d2: f64,
    pub dmax: f64,
    pub dmean: f64,
    /// `None` when the divisor is zero.
    pub hi: Option<f64>,
}

/// D98, D2 and HI over the PTV; Dmax and Dmean over `region`.
pub fn summary_metrics_with(dose: &Tensor, ptv: &Tensor, region: &Tensor, divisor: HiDivisor) -> Result<DoseSummary> {
    let mut v = masked_values(dose, ptv)?;
    v.sort_by(|a, b| b.total_cmp(a));
    let d98 = dm_sorted_desc(&v, 98.0);
    let d2 = dm_sorted_desc(&v, 2.0);
    let r = masked_values(dose, region)?;
    let dmax = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dmean = r.iter().sum::<f64>() / r.len() as f64;
    let denom = match divisor {
        HiDivisor::D50 => dm_sorted_desc(&v, 50.0),
        HiDivisor::Prescription(p) => p,
    };
    let hi = (denom != 0.0).then(|| (d2 - d98) / denom);
    Ok(DoseSummary {
        d98,
        d2,
        dmax,
        dmean,
        hi,
    })
}

/// PTV metrics with `HI = (D2 − D98)/D50`.
pub fn summary_metrics(dose: &Tensor, ptv: &Tensor) -> Result<DoseSummary> {
    summary_metrics_with(dose, ptv, ptv, HiDivisor::D50)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvhCurve {
    pub structure: String,
    /// Ascending dose levels starting at 0.
    pub dose: Vec<f64>,
    /// Fraction of structure voxels receiving at least each level.
    pub volume: Vec<f64>,
}

/// Cumulative DVH over `n_bins` levels from 0 to `max_level` (the global
/// maximum of `dose` when `None`). Doses are expected to be non-negative.
pub fn dvh(structure: &str, dose: &Tensor, mask: &Tensor, n_bins: usize, max_level: Option<f64>) -> Result<DvhCurve> {
    contract!(n_bins >= 2, "a DVH needs at least 2 bins, got {n_bins}");
    let mut v = masked_values(dose, mask)?;
    v.sort_by(|a, b| a.total_cmp(b));
    let top = max_level.unwrap_or_else(|| dose.data().iter().fold(0.0f64, |m, &d| m.max(d as f64)));
    let n = v.len() as f64;
    let mut levels = Vec::with_capacity(n_bins);
    let mut volume = Vec::with_capacity(n_bins);
    for i in 0..n_bins {
        let level = top * i as f64 / (n_bins - 1) as f64;
        let below = v.partition_point(|&d| d < level);
        levels.push(level);
        volume.push((v.len() - below) as f64 / n);
    }
    Ok(DvhCurve {
        structure: structure.to_string(),
        dose: levels,
        volume,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub n: usize,
}

/// Paired two-sided t-test on `a − b` with `n − 1` degrees of freedom.
/// Identical differences give `t = ±∞, p = 0` (or `t = 0, p = 1` when they
/// are all zero).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    contract!(a.len() == b.len(), "paired samples differ in length: {} vs {}", a.len(), b.len());
    let n = a.len();
    contract!(n >= 2, "paired t-test needs at least 2 pairs, got {n}");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, n }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                n,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, n })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> (Tensor, Tensor) {
        let dose = Tensor::from_fn(&[1, 1, n], |i| (i + 1) as f32);
        (dose, Tensor::full(&[1, 1, n], 1.0))
    }

    #[test]
    fn uniform_dose() {
        let dose = Tensor::full(&[1, 4, 4], 0.7);
        let mask = Tensor::full(&[1, 4, 4], 1.0);
        for m in [1.0, 2.0, 50.0, 98.0, 100.0] {
            assert_eq!(dose_at_volume(&dose, &mask, m).unwrap(), 0.7f32 as f64);
        }
        let s = summary_metrics(&dose, &mask).unwrap();
        let u = 0.7f32 as f64;
        assert_eq!((s.d98, s.d2, s.dmax), (u, u, u));
        assert!((s.dmean - u).abs() < 1e-12);
        assert_eq!(s.hi, Some(0.0));
    }

    #[test]
    fn ramp_order_statistics() {
        let (dose, mask) = ramp(100);
        assert_eq!(dose_at_volume(&dose, &mask, 98.0).unwrap(), 3.0);
        assert_eq!(dose_at_volume(&dose, &mask, 100.0).unwrap(), 1.0);
        let s = summary_metrics(&dose, &mask).unwrap();
        assert_eq!((s.d98, s.d2, s.dmax, s.dmean), (3.0, 99.0, 100.0, 50.5));
        assert_eq!(s.hi, Some(96.0 / 51.0));
    }

    #[test]
    fn hi_flagged_when_divisor_is_zero() {
        let dose = Tensor::zeros(&[1, 2, 2]);
        let mask = Tensor::full(&[1, 2, 2], 1.0);
        assert_eq!(summary_metrics(&dose, &mask).unwrap().hi, None);
        let s = summary_metrics_with(&dose, &mask, &mask, HiDivisor::Prescription(1.0)).unwrap();
        assert_eq!(s.hi, Some(0.0));
    }

    #[test]
    fn empty_mask_and_bad_percent() {
        let (dose, _) = ramp(4);
        let empty = Tensor::zeros(&[1, 1, 4]);
        assert!(dose_at_volume(&dose, &empty, 50.0).is_err());
        assert!(summary_metrics(&dose, &empty).is_err());
        assert!(dvh("ptv", &dose, &empty, 10, None).is_err());
        let full = Tensor::full(&[1, 1, 4], 1.0);
        assert!(dose_at_volume(&dose, &full, 0.0).is_err());
        assert!(dose_at_volume(&dose, &full, 100.5).is_err());
        assert!(dvh("ptv", &dose, &full, 1, None).is_err());
    }

    #[test]
    fn dvh_step_and_ramp() {
        let dose = Tensor::full(&[1, 3, 3], 2.0);
        let mask = Tensor::full(&[1, 3, 3], 1.0);
        let c = dvh("ptv", &dose, &mask, 5, Some(4.0)).unwrap();
        assert_eq!(c.dose, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.volume, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        let (dose, mask) = ramp(100);
        let c = dvh("ptv", &dose, &mask, 101, None).unwrap();
        assert_eq!(c.dose[50], 50.0);
        assert_eq!(c.volume[50], 0.51);
        assert_eq!(c.volume[0], 1.0);
    }

    #[test]
    fn t_test_conventions() {
        let a = [1.0, 2.0, 3.0];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (f64::INFINITY, 0.0));
        let r = paired_t_test(&[1.0, 2.0], &[2.0, 3.0]).unwrap();
        assert_eq!(r.t, f64::NEG_INFINITY);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn t_test_worked_example() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        let z = [0.0; 5];
        let r = paired_t_test(&d, &z).unwrap();
        assert!((r.t - 4.242640687).abs() < 1e-6);
        assert!((r.p - 0.0132).abs() < 1e-4);
        let flipped = paired_t_test(&z, &d).unwrap();
        assert_eq!(flipped.t, -r.t);
        assert_eq!(flipped.p, r.p);
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }
}
