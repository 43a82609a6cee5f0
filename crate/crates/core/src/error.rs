use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("integrand or objective produced a non-finite value at {at}")]
    DomainError { at: f64 },

    #[error("root is not bracketed: g({lo}) = {g_lo:e}, g({hi}) = {g_hi:e}")]
    BadBracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("finite-difference Jacobian is singular")]
    SingularJacobian,

    #[error("matrix is singular or numerically rank deficient")]
    SingularMatrix,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing required columns: {}", .missing.join(", "))]
    Schema { missing: Vec<String> },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("inverse-variance weights need strictly positive variances (trial {trial}, component {component})")]
    SingularVariance { trial: usize, component: usize },

    #[error("effect carries no usable variance for component {0}")]
    MissingVariance(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the caller's input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema { .. }
                | Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
