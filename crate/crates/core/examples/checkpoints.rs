//! Persistence: DDTF tensors and DDPX checkpoints, bit-exact round trips,
//! and the errors for corrupt or mismatched files.
//!
//! cargo run --release --example checkpoints

use diffdp::io::{decode_tensor, encode_tensor, load_diffusion_model, save_diffusion_model};
use diffdp::networks::{DiffDpModel, NetConfig};
use diffdp::numerics::Tensor;

fn main() -> diffdp::Result<()> {
    let t = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.25, f32::MIN_POSITIVE, 1e-30, 3.0])?;
    let bytes = encode_tensor(&t);
    println!("DDTF for a 2x3 tensor: {} bytes, header {:02x?}", bytes.len(), &bytes[..16]);
    assert_eq!(decode_tensor(&bytes)?, t);

    let cfg = NetConfig {
        widths: [8, 8, 16, 16, 32, 32],
        emb_dim: 16,
        groups: 4,
        ..NetConfig::default()
    };
    let model = DiffDpModel::new(&cfg, 42)?;
    let dir = std::env::temp_dir().join("diffdp_checkpoints");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("model.ddpx");
    save_diffusion_model(&path, &model)?;
    let loaded = load_diffusion_model(&path, &cfg)?;
    println!(
        "saved {} parameters ({} scalars) to {}; reload identical: {}",
        model.store.len(),
        model.store.num_scalars(),
        path.display(),
        loaded.store == model.store
    );

    let wider = NetConfig {
        widths: [8, 16, 16, 16, 32, 32],
        ..cfg.clone()
    };
    println!("load under other widths: {}", load_diffusion_model(&path, &wider).unwrap_err());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    let bad = dir.join("bad.ddpx");
    std::fs::write(&bad, &bytes).unwrap();
    println!("corrupt magic: {}", load_diffusion_model(&bad, &cfg).unwrap_err());
    let good = std::fs::read(&path).unwrap();
    std::fs::write(&bad, &good[..good.len() / 2]).unwrap();
    println!("truncated: {}", load_diffusion_model(&bad, &cfg).unwrap_err());
    Ok(())
}
