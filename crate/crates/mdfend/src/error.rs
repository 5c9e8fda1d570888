//! Crate-wide error type with process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: unknown domain {value:?}")]
    UnknownDomain {
        path: String,
        line: usize,
        value: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("checkpoint field {field}: {msg}")]
    CheckpointMismatch { field: String, msg: String },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },

    #[error("attention mask has no valid positions")]
    AllZeroMask,

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in tensor {tensor}")]
    NonFinite { tensor: String },

    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    /// Exit code for the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config { .. } => 1,
            Error::Io(_)
            | Error::MalformedRecord { .. }
            | Error::UnknownDomain { .. }
            | Error::CheckpointMismatch { .. }
            | Error::IdOutOfRange { .. }
            | Error::EmptyBatch => 2,
            Error::AllZeroMask | Error::NonFinite { .. } | Error::Diverged(_) => 3,
        }
    }
}
