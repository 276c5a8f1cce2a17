use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error reading slice (l={layer}, t={token}): {source}")]
    SliceIo {
        layer: usize,
        token: usize,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least 2 samples to form marginals, got {0}")]
    TooFewSamples(usize),

    #[error("non-finite critic output at epoch {epoch}")]
    Divergent { epoch: usize },

    #[error("bad magic: not a REPR1 file")]
    BadMagic,

    #[error("unsupported REPR1 version {found} (max supported {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("truncated REPR1 file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("corrupt REPR1 header: {0}")]
    CorruptHeader(String),

    #[error("slice (l={layer}, t={token}) out of range for L={layers}, T={tokens}")]
    SliceOutOfRange {
        layer: usize,
        token: usize,
        layers: usize,
        tokens: usize,
    },

    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),

    #[error("{needed} entities required but only {available} available")]
    NotEnoughEntities { needed: usize, available: usize },

    #[error("vocabulary rejected: {0}")]
    Vocabulary(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
