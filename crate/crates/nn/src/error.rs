use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: expected input shape {expected}, got {actual:?}")]
    Shape {
        layer: usize,
        expected: String,
        actual: Vec<usize>,
    },
    #[error("tensor shape {shape:?} does not match data length {len}")]
    TensorLength { shape: Vec<usize>, len: usize },
    #[error("backward called before forward")]
    NoForward,
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: usize },
    #[error("optimizer state does not match parameter {param}: expected {expected} values, got {actual}")]
    OptimizerMismatch {
        param: usize,
        expected: usize,
        actual: usize,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid layer configuration: {0}")]
    InvalidLayer(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
