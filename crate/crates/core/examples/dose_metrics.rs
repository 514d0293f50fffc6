//! Dose evaluation: D_m, HI and DVH for a phantom, a report over a small
//! test set with two stand-in predictors (a lightly and a heavily blurred
//! truth), the paired t-test between them, and an SVG DVH plot.
//!
//! cargo run --release --example dose_metrics [-- OUT_DIR]

use std::path::PathBuf;

use diffdp::metrics::{
    dose_at_volume, dvh, dvh_svg, evaluate, gaussian_blur, summary_metrics, DoseReport, EvalCase, METRIC_NAMES,
};
use diffdp::numerics::Tensor;
use diffdp::phantom::generate_dataset;

fn main() -> diffdp::Result<()> {
    let cases = generate_dataset(100, 8, 64, 9)?;
    let case = &cases[0];
    let ptv = case.ptv_mask();
    let s = summary_metrics(&case.y, &ptv)?;
    println!(
        "{} PTV: D98 {:.4}  D50 {:.4}  D2 {:.4}  Dmax {:.4}  Dmean {:.4}  HI {:.4}",
        case.case_id,
        s.d98,
        dose_at_volume(&case.y, &ptv, 50.0)?,
        s.d2,
        s.dmax,
        s.dmean,
        s.hi.unwrap_or(f64::NAN)
    );
    let curve = dvh("ptv", &case.y, &ptv, 10, None)?;
    for (d, v) in curve.dose.iter().zip(&curve.volume) {
        println!("  V(>= {d:.3}) = {:5.1}%", v * 100.0);
    }

    let blur = |sigma| -> diffdp::Result<Vec<Tensor>> { cases.iter().map(|c| gaussian_blur(&c.y, sigma)).collect() };
    let (light, heavy) = (blur(1.0)?, blur(3.0)?);
    let report = |preds: &[Tensor]| {
        let eval: Vec<EvalCase> = preds.iter().zip(&cases).map(|(p, c)| EvalCase { pred: p, truth: c }).collect();
        evaluate(&eval, 100)
    };
    let (rl, rh) = (report(&light)?, report(&heavy)?);
    println!("\nmean hf ratio: light blur {:.4}, heavy blur {:.4}", rl.mean_hf_pred(), rh.mean_hf_pred());
    for m in METRIC_NAMES {
        let (a, sa) = rl.delta_stats(m);
        let (b, sb) = rh.delta_stats(m);
        println!("  delta {m:>5}: {a:.4} ({sa:.4})  vs  {b:.4} ({sb:.4})");
    }
    print!("\n{}", DoseReport::comparison_csv(&rl.compare(&rh)?));

    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("diffdp_metrics"));
    std::fs::create_dir_all(&dir).ok();
    let c = &rh.curves[0];
    let path = dir.join(format!("{}_dvh.svg", c.case_id));
    std::fs::write(&path, dvh_svg(&c.case_id, &c.pred, &c.truth)).ok();
    std::fs::write(dir.join("report.csv"), rh.to_csv()).ok();
    println!("\nwrote {} and report.csv", path.display());
    Ok(())
}
