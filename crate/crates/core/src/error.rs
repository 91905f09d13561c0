use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A triangular factorization failed: the matrix is not symmetric positive definite.
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    /// A retraction produced a point that failed SPD certification.
    #[error("update left the SPD manifold: {0}")]
    ManifoldExit(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("chain too short: need at least {needed} post-burn-in draws, have {have}")]
    ChainTooShort { needed: usize, have: usize },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(expected, got))
    }
}
