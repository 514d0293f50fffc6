use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, emptiness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Phantom generation could not place the anatomy.
    #[error("phantom generation failed: {0}")]
    Generation(String),

    #[error("bad magic in {what}: expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported {what} version {found} (expected {expected})")]
    VersionMismatch {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {what}: {detail}")]
    Truncated { what: &'static str, detail: String },

    #[error("duplicate parameter name {0:?} in checkpoint")]
    DuplicateName(String),

    #[error("checkpoint config digest does not match the model configuration")]
    DigestMismatch,

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
