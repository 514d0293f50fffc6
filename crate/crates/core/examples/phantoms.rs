//! Synthetic phantom generation: anatomy, beams and analytic dose for a few
//! seeds, the invariants every case satisfies, and the on-disk dataset
//! layout.
//!
//! cargo run --release --example phantoms [-- OUT_DIR]

use std::path::PathBuf;

use diffdp::io::{read_dataset, write_dataset};
use diffdp::metrics::{gaussian_blur, hf_energy_ratio};
use diffdp::phantom::{generate_dataset, split_dataset, OAR_NAMES};

fn ascii(case: &diffdp::phantom::PhantomCase) -> String {
    let s = case.size;
    let ptv = case.ptv_mask();
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let mut out = String::new();
    for r in (0..s).step_by(2) {
        for c in 0..s {
            let i = r * s + c;
            let d = case.y.data()[i];
            if ptv.data()[i] > 0.5 && (r == 0 || ptv.data()[i - 2 * s] < 0.5) {
                out.push('P');
            } else {
                out.push(shades[((d / 1.25) * 9.0).round().clamp(0.0, 9.0) as usize]);
            }
        }
        out.push('\n');
    }
    out
}

fn main() -> diffdp::Result<()> {
    let cases = generate_dataset(7, 12, 64, 9)?;
    for case in &cases[..3] {
        case.check_invariants()?;
        let oars: Vec<String> = (0..OAR_NAMES.len())
            .map(|k| format!("{} {}", OAR_NAMES[k], case.oar_mask(k).sum_f64()))
            .collect();
        println!(
            "{}: PTV {} px; {}; {} beams; hf ratio {:.4} (blurred {:.4})",
            case.case_id,
            case.ptv_mask().sum_f64(),
            oars.join(", "),
            case.beams.len(),
            hf_energy_ratio(&case.y)?,
            hf_energy_ratio(&gaussian_blur(&case.y, 2.0)?)?
        );
    }
    println!("\n{}", ascii(&cases[0]));

    let (train, val, test) = split_dataset(&cases, (0.5, 0.25, 0.25), 11)?;
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("diffdp_phantoms"));
    write_dataset(&dir, &train, &val, &test)?;
    let back = read_dataset(&dir)?;
    assert_eq!(back.train, train);
    println!(
        "wrote {}/{}/{} cases to {} (x.ddtf, y.ddtf, meta.json per case, split.json)",
        train.len(),
        val.len(),
        test.len(),
        dir.display()
    );
    Ok(())
}
