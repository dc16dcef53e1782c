use thiserror::Error;

/// Errors raised by the verification core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("mixed-sign weight range [{lo}, {hi}] is not supported for this activation")]
    MixedSignRange { lo: f64, hi: f64 },

    #[error("unbounded pre-activation at layer {layer}, neuron {neuron}")]
    Unbounded { layer: usize, neuron: usize },

    #[error("baseline property does not hold under the unattacked network")]
    RejectedBaseline,

    #[error("malformed witness: {0}")]
    Witness(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
