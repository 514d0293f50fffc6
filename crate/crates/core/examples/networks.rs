//! The two networks: structure-encoder feature levels, the noise
//! predictor's fusion schedule, parameter counts, and one forward pass of
//! each model on a phantom batch.
//!
//! cargo run --release --example networks

use diffdp::diffusion::NoiseModel;
use diffdp::io::RunConfig;
use diffdp::networks::{BaselineModel, DiffDpModel, Fusion, NetConfig};
use diffdp::numerics::Graph;
use diffdp::phantom::{generate_dataset, stack_cases};

fn main() -> diffdp::Result<()> {
    for (name, cfg) in [("desk", RunConfig::desk().net()), ("default", NetConfig::default())] {
        let m = DiffDpModel::new(&cfg, 0)?;
        let b = BaselineModel::new(&cfg, 0)?;
        let enc: usize = m.store.iter().filter(|(n, _)| n.starts_with("encoder.")).map(|(_, t)| t.len()).sum();
        println!(
            "{name:>7} widths {:?}: encoder {enc} + predictor {} scalars; baseline {}",
            cfg.widths,
            m.store.num_scalars() - enc,
            b.store.num_scalars()
        );
    }

    let cfg = RunConfig::desk();
    let model = DiffDpModel::new(&cfg.net(), cfg.seed_model)?;
    let kinds: Vec<&str> = model
        .predictor
        .fusion()
        .iter()
        .map(|f| match f {
            Fusion::Add => "add",
            Fusion::CrossAttention(_) => "cross-attention",
        })
        .collect();
    println!("\nfusion per level: {kinds:?}");

    let cases = generate_dataset(0, 2, cfg.size, cfg.n_beams)?;
    let (x, y) = stack_cases(&cases.iter().collect::<Vec<_>>())?;
    let y = cfg.scale().normalize(&y);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y);
    let feats = model.encode(&mut g, xv)?;
    for (k, f) in feats.iter().enumerate() {
        println!("structure level {k}: {:?}", g.shape(*f));
    }
    let eps = model.predict(&mut g, &feats, yv, &[0.9, 0.05])?;
    println!("noise prediction {:?}, {} graph nodes", g.shape(eps), g.len());

    let baseline = BaselineModel::new(&cfg.net(), cfg.seed_model)?;
    println!("baseline prediction {:?}", baseline.predict(&x)?.shape());
    Ok(())
}
