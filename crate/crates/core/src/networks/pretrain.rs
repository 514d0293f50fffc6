//! Supervised pretraining of the structure encoder: a throwaway decoder
//! regresses dose from the encoder features under L1, then is discarded.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv, Up};
use super::{NetConfig, StructureEncoder};
use crate::diffusion::DoseScale;
use crate::error::{contract, Error, Result};
use crate::numerics::{AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};
use crate::phantom::{stack_cases, PhantomCase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Encoder parameters only, named `encoder.*`.
    pub store: ParamStore,
    pub encoder: StructureEncoder,
    /// Mean L1 loss per epoch.
    pub losses: Vec<f64>,
}

/// Top-down mirror of the encoder: a 1×1 projection of the deepest level,
/// then upsample-and-add through levels 3..0, then a 3×3 conv to dose.
struct MirrorDecoder {
    project: Conv,
    ups: Vec<Up>,
    head: Conv,
}

impl MirrorDecoder {
    fn new(store: &mut ParamStore, cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.widths;
        let project = Conv::new(store, "pretrain.project", w[5], w[4], 1, 1, rng);
        let ups = (0..4)
            .rev()
            .map(|k| Up::new(store, &format!("pretrain.up{k}"), w[k + 1], w[k], rng))
            .collect();
        let head = Conv::new(store, "pretrain.head", w[0], 1, 3, 1, rng);
        Self { project, ups, head }
    }

    fn forward(&self, g: &mut Graph, p: &ParamStore, f: &[Var]) -> Result<Var> {
        let top = self.project.forward(g, p, f[5])?;
        let mut h = g.add(top, f[4])?;
        for (up, k) in self.ups.iter().zip((0..4).rev()) {
            let u = up.forward(g, p, h)?;
            let s = g.add(u, f[k])?;
            h = g.swish(s);
        }
        self.head.forward(g, p, h)
    }
}

/// Pretrains an encoder initialized exactly as `DiffDpModel::new(net, seed)`
/// would initialize it, so the result drops into that model by name.
pub fn pretrain_structure_encoder(
    cases: &[PhantomCase],
    cfg: &PretrainConfig,
    net: &NetConfig,
    scale: &DoseScale,
    seed: u64,
) -> Result<PretrainOutcome> {
    contract!(!cases.is_empty(), "pretraining needs at least one case");
    contract!(cfg.batch_size >= 1, "batch size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let encoder = StructureEncoder::new(&mut store, "encoder", net, &mut rng)?;
    let n_encoder = store.len();
    let decoder = MirrorDecoder::new(&mut store, net, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));

    let mut opt = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let picked: Vec<&PhantomCase> = chunk.iter().map(|&i| &cases[i]).collect();
            let (x, y) = stack_cases(&picked)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let target = g.constant(scale.normalize(&y));
            let features = encoder.encode(&mut g, &store, xv)?;
            let pred = decoder.forward(&mut g, &store, &features)?;
            let loss = g.mean_abs_diff(pred, target)?;
            let value = g.value(loss).item()? as f64;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("pretraining loss is {value} in epoch {epoch}")));
            }
            let grads = g.backward(loss)?;
            store.set_grads(&grads);
            opt.step(&mut store)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("pretrain epoch {epoch}: L1 {mean:.5}");
        losses.push(mean);
    }

    let mut kept = ParamStore::new();
    for (name, t) in store.iter().take(n_encoder) {
        kept.add(name, Tensor::new(t.shape(), t.data().to_vec())?);
    }
    Ok(PretrainOutcome {
        store: kept,
        encoder,
        losses,
    })
}
