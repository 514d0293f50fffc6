//! File formats and dataset layout: DDTF tensors, DDPX checkpoints, the run
//! config, and case directories.

mod checkpoint;
mod config;
mod dataset;
mod tensor_file;

pub use checkpoint::{
    config_digest, load_baseline_model, load_checkpoint, load_diffusion_model, load_encoder, save_baseline_model,
    save_checkpoint, save_diffusion_model, save_encoder, Checkpoint, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::RunConfig;
pub use dataset::{case_dirs, read_case, read_dataset, write_case, write_dataset, CaseMeta, Dataset, SplitManifest};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_MAGIC, TENSOR_VERSION};
