use thiserror::Error;

/// Errors raised by the sampler, the estimators and the oracle.
#[derive(Debug, Error)]
pub enum GbsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("covariance is singular in modes {modes:?}")]
    Singular { modes: Vec<usize> },
    #[error("numerical range error: {0}")]
    NumericalRange(String),
    #[error("size guard violated: {0}")]
    SizeGuard(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GbsError {
    /// True for failures that come from the numerics rather than from the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GbsError::Singular { .. } | GbsError::NumericalRange(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, GbsError>;
