use std::path::PathBuf;

use plasm_nn::LayerError;
use plasm_tensor::TensorError;
use thiserror::Error;

/// Problems decoding one of the binary containers.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("unknown phase tag {0}")]
    UnknownPhase(u8),
    #[error("truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("header dimensions {0:?} overflow")]
    DimOverflow(Vec<u64>),
    #[error("payload length mismatch: header implies {expected} bytes, file has {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("tensor {name:?} has shape {shape:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    #[error("{phase}: loss became non-finite at step {step}")]
    Diverged { phase: &'static str, step: usize },
    #[error("parameter {0:?} has no gradient")]
    MissingGrad(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
