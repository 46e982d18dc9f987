use thiserror::Error;

/// Errors produced by the sensing toolkit.
#[derive(Debug, Error)]
pub enum ScsError {
    #[error("matrix is not symmetric (relative residual {residual:.3e})")]
    NotSymmetric { residual: f64 },

    #[error(
        "matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e}, largest {largest:.3e})"
    )]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("singular matrix after eigenvalue flooring: {0}")]
    Singular(&'static str),

    #[error("projected covariance of {0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("measurement budget exhausted: {remaining} rows left, block needs {block}")]
    BudgetExhausted { remaining: usize, block: usize },

    #[error("no signals were assigned to any class")]
    EmptyAssignment,

    #[error("unsupported protocol pair {step1}+{step2}; valid pairs: {valid}")]
    InvalidProtocol {
        step1: String,
        step2: String,
        valid: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, ScsError>;

pub(crate) fn invalid(msg: impl Into<String>) -> ScsError {
    ScsError::InvalidParameter(msg.into())
}
