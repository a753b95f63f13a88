/// Errors raised across the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range or malformed.
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// Two objects built on different Hermite bases were combined.
    #[error("basis mismatch: expected {expected} coefficients, got {got}")]
    BasisMismatch { expected: usize, got: usize },

    /// A computation produced non-finite values or failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The coefficient selection cannot satisfy one of its inequalities.
    #[error("infeasible coefficient selection: {0}")]
    Infeasible(String),

    /// The low-frequency branch count differs from five.
    #[error("expected 5 low-frequency eigenvalues at s = {s}, found {found}")]
    BranchCount { s: f64, found: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn validation(field: &str, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.to_string(), reason: reason.into() }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Parse(_) | Error::BasisMismatch { .. } => 2,
            Error::Io { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
