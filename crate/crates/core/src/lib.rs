pub mod cli;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod metrics;
pub mod networks;
pub mod numerics;
pub mod phantom;
pub mod pipeline;

pub use error::{Error, Result};
