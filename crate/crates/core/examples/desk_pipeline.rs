//! Desk-scale run in one process: generate phantoms, pretrain the structure
//! encoder, train the diffusion model and the L1 baseline, sample the test
//! split and compare both against ground truth.
//!
//! cargo run --release --example desk_pipeline [-- OUT_DIR [CONFIG_JSON]]

use std::path::PathBuf;
use std::time::Instant;

use diffdp::io::RunConfig;
use diffdp::metrics::DoseReport;
use diffdp::networks::DiffDpModel;
use diffdp::pipeline;

fn main() -> diffdp::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let cfg = match std::env::args().nth(2) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    let clock = Instant::now();
    let data = pipeline::generate(&cfg, None, cfg.seed_data)?;
    println!("{} train / {} val / {} test phantoms at {}x{}", data.train.len(), data.val.len(), data.test.len(), cfg.size, cfg.size);

    let pre = pipeline::pretrain(&cfg, &data.train)?;
    println!(
        "pretraining L1 {:.4} -> {:.4} ({:.0} s)",
        pre.losses.first().unwrap_or(&f64::NAN),
        pre.losses.last().unwrap_or(&f64::NAN),
        clock.elapsed().as_secs_f64()
    );

    let (model, log) = pipeline::train_diffusion(&cfg, &data, Some(&pre.store), cfg.epochs, out.as_deref())?;
    println!(
        "diffusion loss {:.4} -> {:.4} over {} steps ({:.0} s)",
        log.head_mean(10),
        log.tail_mean(10),
        log.steps.len(),
        clock.elapsed().as_secs_f64()
    );

    let untrained = DiffDpModel::new(&cfg.net(), cfg.seed_model)?;
    let raw = pipeline::sample_doses(&cfg, &untrained, &data.test, cfg.seed_sample)?;
    let diff = pipeline::sample_doses(&cfg, &model, &data.test, cfg.seed_sample)?;
    println!(
        "test MAE: untrained {:.4}, trained {:.4} ({:.0} s)",
        pipeline::mean_abs_error(&raw, &data.test)?,
        pipeline::mean_abs_error(&diff, &data.test)?,
        clock.elapsed().as_secs_f64()
    );

    let (baseline, _) = pipeline::train_baseline(&cfg, &data, cfg.baseline_epochs, out.as_deref())?;
    let base = pipeline::predict_baseline(&cfg, &baseline, &data.test)?;
    println!("baseline MAE {:.4} ({:.0} s)", pipeline::mean_abs_error(&base, &data.test)?, clock.elapsed().as_secs_f64());

    let rd = pipeline::evaluate_predictions(&cfg, &diff, &data.test)?;
    let rb = pipeline::evaluate_predictions(&cfg, &base, &data.test)?;
    println!("mean hf ratio: diffusion {:.4}, baseline {:.4}, truth {:.4}", rd.mean_hf_pred(), rb.mean_hf_pred(), mean_truth_hf(&rd));
    println!("{:>6} {:>12} {:>12} {:>8}", "metric", "diffusion", "baseline", "p");
    for c in rd.compare(&rb)? {
        println!("{:>6} {:>12.4} {:>12.4} {:>8.3}", c.metric, c.mean_delta, c.mean_delta_other, c.test.p);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).ok();
        std::fs::write(dir.join("report_diffusion.csv"), rd.to_csv()).ok();
        std::fs::write(dir.join("report_baseline.csv"), rb.to_csv()).ok();
    }
    Ok(())
}

fn mean_truth_hf(r: &DoseReport) -> f64 {
    r.rows.iter().map(|row| row.hf_truth).sum::<f64>() / r.rows.len().max(1) as f64
}
