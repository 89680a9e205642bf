use plasm_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{layer}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        layer: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} ({value}) is not divisible by {divisor}")]
    NotDivisible {
        what: &'static str,
        value: usize,
        divisor: usize,
    },
    #[error("{layer}: expected a rank-{expected} input, got shape {shape:?}")]
    BadRank {
        layer: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("visibility mask {mask:?} does not match feature map {features:?}")]
    MaskShape {
        mask: Vec<usize>,
        features: Vec<usize>,
    },
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, LayerError>;
