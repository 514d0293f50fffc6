//! The structure encoder, the conditional noise predictor, the L1 baseline,
//! and encoder pretraining.

mod embedding;
mod encoder;
pub mod layers;
mod predictor;
mod pretrain;

pub use embedding::NoiseLevelEmbedding;
pub use encoder::{StructureEncoder, SPATIAL_MULTIPLE};
pub use predictor::{BaselineUnet, Fusion, NoisePredictor};
pub use pretrain::{pretrain_structure_encoder, PretrainConfig, PretrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseModel;
use crate::error::{contract, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Architecture hyperparameters shared by all networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// CT + PTV + OAR masks.
    pub in_channels: usize,
    /// Channel widths of feature levels 0 through 5.
    pub widths: [usize; 6],
    /// Width of the sinusoidal noise-level table.
    pub emb_dim: usize,
    /// GroupNorm group count, clamped to the channel count.
    pub groups: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            widths: [32, 64, 128, 128, 256, 256],
            emb_dim: 32,
            groups: 8,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.in_channels >= 1, "network needs at least one input channel");
        contract!(self.groups >= 1, "group count must be positive");
        for &w in &self.widths {
            contract!(w >= 1, "channel widths must be positive");
            layers::groups_for(w, self.groups)?;
        }
        contract!(
            self.emb_dim >= 2 && self.emb_dim % 2 == 0,
            "embedding dimension {} must be even",
            self.emb_dim
        );
        Ok(())
    }
}

/// Structure encoder plus noise predictor over one parameter store.
/// Encoder parameters are named `encoder.*`, predictor parameters
/// `predictor.*`.
#[derive(Debug, Clone)]
pub struct DiffDpModel {
    pub config: NetConfig,
    pub store: ParamStore,
    pub encoder: StructureEncoder,
    pub predictor: NoisePredictor,
}

impl DiffDpModel {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = StructureEncoder::new(&mut store, "encoder", config, &mut rng)?;
        let predictor = NoisePredictor::new(&mut store, "predictor", config, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            predictor,
        })
    }

    /// Copies every `encoder.*` parameter from a pretrained store.
    pub fn load_encoder(&mut self, pretrained: &ParamStore) -> Result<()> {
        let mut copied = 0;
        for (name, t) in pretrained.iter().filter(|(n, _)| n.starts_with("encoder.")) {
            let id = self.store.find(name).ok_or_else(|| {
                crate::Error::CheckpointMismatch(format!("pretrained parameter {name} unknown to the model"))
            })?;
            self.store.assign(id, t)?;
            copied += 1;
        }
        let expected = self.store.iter().filter(|(n, _)| n.starts_with("encoder.")).count();
        contract!(
            copied == expected,
            "pretrained store provides {copied} of {expected} encoder parameters"
        );
        Ok(())
    }
}

impl NoiseModel for DiffDpModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn encode(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        self.encoder.encode(g, &self.store, x)
    }

    fn predict(&self, g: &mut Graph, features: &[Var], y_t: Var, gamma: &[f64]) -> Result<Var> {
        self.predictor.predict(g, &self.store, features, y_t, gamma)
    }
}

/// L1 regression baseline with its parameters (`baseline.*`).
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub config: NetConfig,
    pub store: ParamStore,
    pub net: BaselineUnet,
}

impl BaselineModel {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = BaselineUnet::new(&mut store, "baseline", config, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            store,
            net,
        })
    }

    /// Direct prediction in the model's working range.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.net.predict(&mut g, &self.store, xv)?;
        Ok(g.value(y).clone())
    }
}
