use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("convolution output would have non-positive size along {axis} (input {input}, kernel {kernel}, stride {stride}, padding {padding})")]
    NonPositiveOutput {
        axis: &'static str,
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("batch normalization in train mode needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("backward called without a matching forward pass")]
    MissingCache,
    #[error("invalid layer configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter `{0}` missing from checkpoint")]
    MissingParameter(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
