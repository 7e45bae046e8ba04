use thiserror::Error;

/// Errors raised by the kernels, certificates and oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TiltError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point outside the domain: {0}")]
    Domain(String),

    #[error("{what} did not converge (residual {residual:e})")]
    Convergence { what: String, residual: f64 },

    #[error("not stationary: {0}")]
    NotStationary(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl TiltError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        TiltError::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        TiltError::Domain(msg.into())
    }

    /// True for errors caused by the caller's data rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            TiltError::InvalidInput(_) | TiltError::Domain(_) | TiltError::NotStationary(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, TiltError>;
