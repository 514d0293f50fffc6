use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor_file::read_bytes;
use crate::diffusion::{DoseScale, NoiseSchedule};
use crate::error::{Error, Result};
use crate::networks::{NetConfig, PretrainConfig};

/// Every knob of a pipeline run as one flat JSON object. All keys are
/// required and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub size: usize,
    pub n_beams: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed_data: u64,
    pub seed_split: u64,
    pub seed_model: u64,
    pub seed_train: u64,
    pub seed_sample: u64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Upper end of the dose range mapped onto `[-1, 1]`.
    pub max_dose: f64,
    pub widths: [usize; 6],
    pub emb_dim: usize,
    pub groups: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_dropped: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub baseline_epochs: usize,
    pub checkpoint_every: usize,
    pub val_every: usize,
    /// Stop after this many validation checks without improvement.
    pub patience: Option<usize>,
    pub dvh_bins: usize,
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Single-core desk scale: 64×64 phantoms, T = 200, 16/4/8 cases.
    pub fn desk() -> Self {
        Self {
            size: 64,
            n_beams: 9,
            n_train: 16,
            n_val: 4,
            n_test: 8,
            seed_data: 7,
            seed_split: 11,
            seed_model: 1,
            seed_train: 2,
            seed_sample: 3,
            timesteps: 200,
            beta_start: 5e-2,
            beta_end: 5e-4,
            max_dose: 1.5,
            widths: [16, 32, 32, 64, 64, 64],
            emb_dim: 32,
            groups: 8,
            batch_size: 8,
            epochs: 600,
            lr: 1e-3,
            lr_drop_epoch: 480,
            lr_dropped: 5e-4,
            pretrain_epochs: 50,
            pretrain_lr: 1e-3,
            baseline_epochs: 300,
            checkpoint_every: 100,
            val_every: 10,
            patience: None,
            dvh_bins: 100,
            data_dir: None,
        }
    }

    /// Full-scale training setup at 256×256 with T = 1000.
    pub fn full_scale() -> Self {
        Self {
            size: 256,
            n_train: 98,
            n_val: 10,
            n_test: 22,
            timesteps: 1000,
            beta_start: 1e-2,
            beta_end: 1e-4,
            widths: [32, 64, 128, 128, 256, 256],
            batch_size: 16,
            epochs: 1500,
            lr: 1e-4,
            lr_drop_epoch: 1200,
            lr_dropped: 5e-5,
            baseline_epochs: 1500,
            ..Self::desk()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_bytes(path.as_ref())?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config("config is not UTF-8".into()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.size == 0 || self.size % 16 != 0 {
            return fail(format!("size {} must be a positive multiple of 16", self.size));
        }
        if self.n_beams == 0 {
            return fail("n_beams must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.max_dose > 0.0) {
            return fail(format!("max_dose {} must be positive", self.max_dose));
        }
        if !(self.lr > 0.0 && self.lr_dropped > 0.0 && self.pretrain_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.checkpoint_every == 0 || self.val_every == 0 || self.dvh_bins < 2 {
            return fail("checkpoint_every and val_every must be positive, dvh_bins at least 2".into());
        }
        self.schedule()?;
        self.net().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            in_channels: crate::phantom::STRUCTURE_CHANNELS,
            widths: self.widths,
            emb_dim: self.emb_dim,
            groups: self.groups,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scale(&self) -> DoseScale {
        DoseScale::new(self.max_dose)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.lr_dropped
        } else {
            self.lr
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            batch_size: self.batch_size,
        }
    }

    /// Train/validation/test fractions implied by the case counts.
    pub fn split_fractions(&self) -> (f64, f64, f64) {
        let total = (self.n_train + self.n_val + self.n_test) as f64;
        (
            self.n_train as f64 / total,
            self.n_val as f64 / total,
            self.n_test as f64 / total,
        )
    }

    pub fn total_cases(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}
