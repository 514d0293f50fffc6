use std::collections::HashSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tensor_file::{encode_tensor_into, read_bytes, read_tensor_from, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::networks::{BaselineModel, DiffDpModel, NetConfig};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DDPX";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What a checkpoint holds; part of the digest so one kind cannot be loaded
/// as another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Diffusion,
    Baseline,
    Encoder,
}

impl ModelKind {
    fn tag(self) -> &'static str {
        match self {
            ModelKind::Diffusion => "diffusion",
            ModelKind::Baseline => "baseline",
            ModelKind::Encoder => "encoder",
        }
    }
}

/// SHA-256 over the model kind and the architecture config.
pub fn config_digest(kind: ModelKind, cfg: &NetConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(kind.tag().as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(digest: [u8; 32], store: &ParamStore) -> Self {
        let entries = store
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::new(t.shape(), t.data().to_vec()).expect("valid shape")))
            .collect();
        Self { digest, entries }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).expect("parameter names fit in u16");
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(bytes);
            encode_tensor_into(t, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let count = r.u32()? as usize;
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Truncated {
                    what: "checkpoint",
                    detail: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateName(name));
            }
            r.what = "checkpoint tensor";
            let t = read_tensor_from(&mut r)?;
            r.what = "checkpoint";
            entries.push((name, t));
        }
        r.finish()?;
        Ok(Self { digest, entries })
    }

    /// Copies every entry into `store` after checking the digest, the
    /// parameter set and every shape; on error `store` is untouched.
    pub fn apply(&self, digest: [u8; 32], store: &mut ParamStore) -> Result<()> {
        if self.digest != digest {
            return Err(Error::DigestMismatch);
        }
        if self.entries.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        let mut plan = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let id = store
                .find(name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("unknown parameter {name}")))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            plan.push((id, t));
        }
        for (id, t) in plan {
            store.assign(id, t)?;
        }
        Ok(())
    }

    /// The entries as a fresh parameter store.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in &self.entries {
            store.add(name.clone(), t.clone());
        }
        store
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written checkpoint.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    write_bytes(&tmp, &ckpt.encode())?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&read_bytes(path.as_ref())?)
}

pub fn save_diffusion_model(path: impl AsRef<Path>, model: &DiffDpModel) -> Result<()> {
    let d = config_digest(ModelKind::Diffusion, &model.config);
    save_checkpoint(path, &Checkpoint::from_store(d, &model.store))
}

pub fn load_diffusion_model(path: impl AsRef<Path>, cfg: &NetConfig) -> Result<DiffDpModel> {
    let ckpt = load_checkpoint(path)?;
    let mut model = DiffDpModel::new(cfg, 0)?;
    ckpt.apply(config_digest(ModelKind::Diffusion, cfg), &mut model.store)?;
    Ok(model)
}

pub fn save_baseline_model(path: impl AsRef<Path>, model: &BaselineModel) -> Result<()> {
    let d = config_digest(ModelKind::Baseline, &model.config);
    save_checkpoint(path, &Checkpoint::from_store(d, &model.store))
}

pub fn load_baseline_model(path: impl AsRef<Path>, cfg: &NetConfig) -> Result<BaselineModel> {
    let ckpt = load_checkpoint(path)?;
    let mut model = BaselineModel::new(cfg, 0)?;
    ckpt.apply(config_digest(ModelKind::Baseline, cfg), &mut model.store)?;
    Ok(model)
}

pub fn save_encoder(path: impl AsRef<Path>, cfg: &NetConfig, encoder_params: &ParamStore) -> Result<()> {
    let d = config_digest(ModelKind::Encoder, cfg);
    save_checkpoint(path, &Checkpoint::from_store(d, encoder_params))
}

/// Pretrained encoder parameters, checked against `cfg`.
pub fn load_encoder(path: impl AsRef<Path>, cfg: &NetConfig) -> Result<ParamStore> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.digest != config_digest(ModelKind::Encoder, cfg) {
        return Err(Error::DigestMismatch);
    }
    Ok(ckpt.to_store())
}
