use diffdp::metrics::{gaussian_blur, hf_energy_ratio};
use diffdp::phantom::{generate_case, generate_dataset, split_dataset};

#[test]
fn thousand_case_sweep() {
    for seed in 0..1000u64 {
        let case = generate_case(seed, 64, 9).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        case.check_invariants().unwrap();
        let sharp = hf_energy_ratio(&case.y).unwrap();
        let blurred = hf_energy_ratio(&gaussian_blur(&case.y, 2.0).unwrap()).unwrap();
        assert!(sharp > blurred, "seed {seed}: {sharp} vs blurred {blurred}");
    }
}

#[test]
fn dose_vanishes_outside_body_and_is_bounded() {
    for case in generate_dataset(500, 20, 64, 9).unwrap() {
        let body = case.body_mask();
        for (d, b) in case.y.data().iter().zip(body.data()) {
            assert!(*d >= 0.0);
            if *b == 0.0 {
                assert_eq!(*d, 0.0);
            }
        }
        let ct = case.ct();
        assert!(ct.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(case.x.shape(), &[6, 64, 64]);
        assert_eq!(case.y.shape(), &[1, 64, 64]);
    }
}

#[test]
fn dataset_split_is_a_partition() {
    let cases = generate_dataset(0, 28, 32, 9).unwrap();
    let (tr, va, te) = split_dataset(&cases, (16.0 / 28.0, 4.0 / 28.0, 8.0 / 28.0), 1).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (16, 4, 8));
    let mut ids: Vec<&str> = tr.iter().chain(&va).chain(&te).map(|c| c.case_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 28);
}
