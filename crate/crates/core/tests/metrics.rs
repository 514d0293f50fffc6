mod common;

use common::oracles::{brute_dose_at_volume, brute_fraction_at_least, t_two_sided_p};
use diffdp::metrics::{
    dose_at_volume, dvh, evaluate, gaussian_blur, hf_energy_ratio, mean_std, paired_t_test, summary_metrics,
    DoseReport, EvalCase, METRIC_NAMES,
};
use diffdp::numerics::Tensor;
use diffdp::phantom::generate_case;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(rng: &mut ChaCha8Rng, n: usize, levels: Option<u32>) -> (Tensor, Tensor, Vec<f64>) {
    let dose = Tensor::from_fn(&[1, n], |_| match levels {
        Some(k) => rng.random_range(0..k) as f32 * 0.25,
        None => rng.random_range(0.0..3.0f32),
    });
    let density = rng.random_range(0.05..1.0);
    let mut mask = Tensor::from_fn(&[1, n], |_| if rng.random_bool(density) { 1.0 } else { 0.0 });
    mask.data_mut()[rng.random_range(0..n)] = 1.0;
    let values = dose
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m > 0.5)
        .map(|(&d, _)| d as f64)
        .collect();
    (dose, mask, values)
}

#[test]
fn dose_at_volume_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..40 {
        let n = if trial < 4 { 10_000 } else { rng.random_range(1..600) };
        let ties = if trial % 3 == 0 { Some(7) } else { None };
        let (dose, mask, values) = random_case(&mut rng, n, ties);
        let ms: Vec<u32> = if n > 5000 { vec![1, 2, 50, 98, 100] } else { (1..=100).collect() };
        for m in ms {
            assert_eq!(
                dose_at_volume(&dose, &mask, m as f64).unwrap(),
                brute_dose_at_volume(&values, m),
                "trial {trial}, m {m}"
            );
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(dose_at_volume(&dose, &mask, 100.0).unwrap(), min);
    }
}

#[test]
fn dvh_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let n = rng.random_range(1..10_000);
        let (dose, mask, values) = random_case(&mut rng, n, None);
        let c = dvh("s", &dose, &mask, 64, None).unwrap();
        assert_eq!(c.volume[0], 1.0);
        for (l, v) in c.dose.iter().zip(&c.volume) {
            assert_eq!(*v, brute_fraction_at_least(&values, *l));
        }
    }
}

#[test]
fn hi_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let (dose, mask, values) = random_case(&mut rng, 2000, None);
        let s = summary_metrics(&dose, &mask).unwrap();
        let d2 = brute_dose_at_volume(&values, 2);
        let d98 = brute_dose_at_volume(&values, 98);
        let d50 = brute_dose_at_volume(&values, 50);
        assert_eq!(s.hi, Some((d2 - d98) / d50));
        assert_eq!(s.dmax, values.iter().copied().fold(f64::MIN, f64::max));
    }
}

#[test]
fn t_test_matches_integration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..60 {
        let n = rng.random_range(2..=30);
        let shift = rng.random_range(-1.0..1.0);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + shift + rng.random_range(-1.0..1.0)).collect();
        let r = paired_t_test(&a, &b).unwrap();
        let p = t_two_sided_p(r.t, (n - 1) as f64);
        assert!((r.p - p).abs() < 1e-4, "n {n}: {} vs oracle {p}", r.p);
    }
    let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
    assert!((r.p - t_two_sided_p(r.t, 4.0)).abs() < 1e-6);
}

#[test]
fn blur_lowers_high_frequency_share() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for sigma in [1.0, 2.0, 3.5] {
        for _ in 0..10 {
            let img = Tensor::from_fn(&[1, 32, 32], |_| rng.random_range(0.0..1.0));
            assert!(hf_energy_ratio(&gaussian_blur(&img, sigma).unwrap()).unwrap() < hf_energy_ratio(&img).unwrap());
        }
    }
    let case = generate_case(9, 64, 9).unwrap();
    let blurred = gaussian_blur(&case.y, 2.0).unwrap();
    assert!(hf_energy_ratio(&blurred).unwrap() < hf_energy_ratio(&case.y).unwrap());
}

fn noisy(y: &Tensor, seed: u64, amount: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(y.shape(), |i| (y.data()[i] + rng.random_range(-amount..amount)).max(0.0))
}

#[test]
fn report_aggregates_and_csv_round_trip() {
    let cases: Vec<_> = (0..5).map(|s| generate_case(s, 32, 9).unwrap()).collect();
    let preds: Vec<Tensor> = cases.iter().enumerate().map(|(i, c)| noisy(&c.y, i as u64, 0.2)).collect();
    let eval: Vec<EvalCase> = cases.iter().zip(&preds).map(|(c, p)| EvalCase { pred: p, truth: c }).collect();
    let report = evaluate(&eval, 40).unwrap();
    assert_eq!(report.rows.len(), 5);
    for m in METRIC_NAMES {
        let deltas: Vec<f64> = report
            .rows
            .iter()
            .map(|r| {
                let d = r.delta(m).unwrap();
                assert!(d >= 0.0);
                d
            })
            .collect();
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let sd = (deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let (rm, rs) = report.delta_stats(m);
        assert!((rm - mean).abs() < 1e-12 && (rs - sd).abs() < 1e-12);
    }

    let text = report.to_csv();
    assert!(text.starts_with("case_id,pred_hi,gt_hi,delta_hi,"));
    let back = DoseReport::from_csv(&text).unwrap();
    assert_eq!(back.to_csv(), text);
    for (a, b) in report.rows.iter().zip(&back.rows) {
        assert_eq!(a.case_id, b.case_id);
        for m in METRIC_NAMES {
            let (x, y) = (a.delta(m).unwrap(), b.delta(m).unwrap());
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-3), "{m}: {x} vs {y}");
        }
        assert_eq!(format!("{:.8e}", a.hf_pred), format!("{:.8e}", b.hf_pred));
    }
    assert!(DoseReport::from_csv("nonsense\n").is_err());

    let worse: Vec<Tensor> = cases.iter().enumerate().map(|(i, c)| noisy(&c.y, 50 + i as u64, 0.5)).collect();
    let eval2: Vec<EvalCase> = cases.iter().zip(&worse).map(|(c, p)| EvalCase { pred: p, truth: c }).collect();
    let other = evaluate(&eval2, 40).unwrap();
    let cmp = report.compare(&other).unwrap();
    assert_eq!(cmp.len(), METRIC_NAMES.len());
    let dmean = cmp.iter().find(|c| c.metric == "dmean").unwrap();
    assert_eq!(dmean.mean_delta, mean_std(&report.deltas("dmean")).0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dose_at_volume_is_monotone(seed in 0u64..10_000, m1 in 1.0f64..100.0, m2 in 1.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dose, mask, _) = random_case(&mut rng, 300, None);
        let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
        prop_assert!(dose_at_volume(&dose, &mask, lo).unwrap() >= dose_at_volume(&dose, &mask, hi).unwrap());
    }

    #[test]
    fn dvh_is_non_increasing(seed in 0u64..10_000, bins in 2usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dose, mask, _) = random_case(&mut rng, 500, Some(9));
        let c = dvh("s", &dose, &mask, bins, None).unwrap();
        prop_assert_eq!(c.volume[0], 1.0);
        prop_assert!(c.volume.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hi_is_scale_invariant(seed in 0u64..10_000, c in 0.1f32..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dose, mask, _) = random_case(&mut rng, 400, None);
        let a = summary_metrics(&dose, &mask).unwrap();
        let b = summary_metrics(&dose.map(|v| v * c), &mask).unwrap();
        prop_assert!((a.hi.unwrap() - b.hi.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn t_test_sign_symmetry(a in proptest::collection::vec(-5.0f64..5.0, 2..20)) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.5 + i as f64 * 0.1).collect();
        let r = paired_t_test(&a, &b).unwrap();
        let s = paired_t_test(&b, &a).unwrap();
        prop_assert_eq!(r.t, -s.t);
        prop_assert_eq!(r.p, s.p);
    }
}
