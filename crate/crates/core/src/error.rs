use thiserror::Error;

use crate::format::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("adaptive pooling cannot upsample {from:?} to {to:?}")]
    UnsupportedUpsample { from: (usize, usize), to: (usize, usize) },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dense attention needs {required} bytes but the cap is {cap} bytes; use the streaming scorer")]
    Capacity { required: u64, cap: u64 },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Stable machine-readable category, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => "shape",
            Error::UnsupportedUpsample { .. } => "unsupported_upsample",
            Error::NonFinite { .. } => "non_finite",
            Error::Argument(_) => "argument",
            Error::Capacity { .. } => "capacity",
            Error::Format(e) => e.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
