use thiserror::Error;

/// Errors raised by the laboratory's library operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown token id {token} (vocab size {vocab})")]
    UnknownToken { token: usize, vocab: usize },

    #[error("mask shape mismatch: expected {expected_layers}x{expected_width}, got {detail}")]
    MaskShape {
        expected_layers: usize,
        expected_width: usize,
        detail: String,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl LabError {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        LabError::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        LabError::Contract {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
