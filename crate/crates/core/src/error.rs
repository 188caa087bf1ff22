use thiserror::Error;

#[derive(Debug, Error)]
pub enum PinError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("memory budget exceeded for d={d}, n_max={n_max} ({entries} entries, limit {limit})")]
    BudgetExceeded {
        d: usize,
        n_max: usize,
        entries: usize,
        limit: usize,
    },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("walk difference is recurrent in d={0}; Green function diverges")]
    Recurrent(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("tolerance not met: {what} achieved {achieved:e}, requested {requested:e}")]
    Tolerance {
        what: String,
        achieved: f64,
        requested: f64,
    },

    #[error("kernel cache {path}: {reason}")]
    Cache { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PinError>;

pub(crate) fn invalid(msg: impl Into<String>) -> PinError {
    PinError::InvalidArgument(msg.into())
}
