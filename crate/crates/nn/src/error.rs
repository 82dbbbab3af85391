use thiserror::Error;

/// Errors surfaced by the neural substrate.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("backward called without a matching forward pass")]
    NoForwardPass,
}

impl NnError {
    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        NnError::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
