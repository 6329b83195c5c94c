use thiserror::Error;

use crate::data::SetId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("code length mismatch: {left} bits vs {right} bits")]
    CodeLength { left: usize, right: usize },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("unsupported {kind} file version {found} (this build reads version {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("duplicate set id {0}")]
    DuplicateId(SetId),

    #[error("set {0} carries no label but labels are required here")]
    Unlabeled(SetId),

    #[error("anchor set {0} is not available")]
    MissingAnchor(SetId),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
