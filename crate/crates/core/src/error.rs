use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violated a documented precondition (dimension mismatch,
    /// out-of-range hyperparameter, empty search box, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Gram matrix could not be factorized even after escalating the
    /// diagonal jitter through every rung of the ladder.
    #[error("cholesky factorization failed after jitter ladder {ladder:?} (mean diagonal {mean_diagonal})")]
    Factorization { ladder: Vec<f64>, mean_diagonal: f64 },

    /// A run was configured inconsistently (e.g. a simulator-aided run
    /// without a simulator probe).
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
