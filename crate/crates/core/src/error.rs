use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite activation at t={t}, layer={layer}")]
    NonFiniteActivation { t: usize, layer: usize },

    #[error("non-finite gradient in layer {layer} ({param})")]
    NonFiniteGradient { layer: usize, param: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported model for {operation}: {reason}")]
    Unsupported {
        operation: &'static str,
        reason: String,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn mismatch(
    context: &'static str,
    expected: impl ToString,
    actual: impl ToString,
) -> Error {
    Error::DimensionMismatch {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
