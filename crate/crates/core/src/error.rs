use thiserror::Error;

/// Errors raised anywhere in the recovery pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular evaluation point: composition {composition:?} gives a vanishing weight")]
    SingularPoint { composition: Vec<usize> },

    #[error("no threshold satisfies the tail budget: {0}")]
    Threshold(String),

    #[error("no feasible value for coefficient {index} of sigma_{k}")]
    NoSolution { k: usize, index: usize },

    #[error("coefficient {index} of sigma_{k} is ambiguous: candidates {candidates:?}")]
    Ambiguous {
        k: usize,
        index: usize,
        candidates: Vec<u64>,
    },

    #[error("corrupt input: {0}")]
    CorruptInput(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("no distribution matches the estimates within the margin")]
    Margin,

    #[error("recovery failed: {0}")]
    RecoveryFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
