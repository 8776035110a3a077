use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum DgmmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance matrix is not positive definite after jitter")]
    NotPositiveDefinite,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("csv error at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DgmmError {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DgmmError::DimensionMismatch { .. }
                | DgmmError::InvalidSpec(_)
                | DgmmError::InvalidArgument(_)
                | DgmmError::Empty(_)
                | DgmmError::Csv { .. }
                | DgmmError::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, DgmmError>;
