use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong inside the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("image format error in {path}: {reason}")]
    ImageFormat { path: PathBuf, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("trigger digest mismatch: manifest records {expected}, file hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
