use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("iterate diverged (non-finite value) at round {round}")]
    Diverged { round: usize },

    #[error("linear system is singular; the average Hessian is not positive definite")]
    Singular,

    #[error("certificate refused: {0}")]
    CertificateRefused(String),

    #[error("invalid variant: {0}")]
    InvalidVariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("outcome space of {outcomes} exceeds the enumeration limit {limit}")]
    OutcomeSpaceTooLarge { outcomes: u128, limit: u128 },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
