use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Dims,
        right: Dims,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value produced by layer `{layer}`")]
    NonFinite { layer: String },

    #[error("weight file has bad magic {found:?} (expected \"CSAF\")")]
    BadMagic { found: [u8; 4] },

    #[error("weight file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("weight file truncated: {0}")]
    Truncated(String),

    #[error("weight file structure error: {0}")]
    Structure(String),

    #[error("{path}: not a binary PGM (P5) file")]
    NotP5 { path: PathBuf },

    #[error("{path}: unsupported PGM maxval {maxval} (only 255 is accepted)")]
    MaxVal { path: PathBuf, maxval: u32 },

    #[error("{path}: malformed PGM: {reason}")]
    MalformedPgm { path: PathBuf, reason: String },

    #[error("{path}: no matching file in the other modality directory")]
    Unpaired { path: PathBuf },

    #[error("{path}: class directory has no image pairs")]
    EmptyClass { path: PathBuf },

    #[error("{path}: image is {found:?}, expected {expected:?} like the rest of the modality")]
    InconsistentSize {
        path: PathBuf,
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
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
}
