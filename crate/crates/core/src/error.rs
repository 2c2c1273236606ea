use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid config: {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("angle {0} rad outside (-pi/2, pi/2)")]
    Domain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("singular matrix ({0})")]
    Singular(&'static str),

    #[error("stale inverse state: built for step {state}, requested step {requested}")]
    StaleState { state: u64, requested: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at slow-time step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input configuration rather than numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Parse(_) | Error::Validation { .. } | Error::InvalidArgument(_) => true,
            Error::Step { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
