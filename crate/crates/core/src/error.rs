use thiserror::Error;

/// Errors raised by the library.
///
/// The CLI maps [`Error::Budget`] to exit code 3 and every other
/// input problem to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("enumeration needs {outcomes} outcomes, above the cap of {cap}")]
    EnumerationCap { outcomes: u128, cap: u64 },

    #[error("estimated {estimated:.3e} scalar operations exceeds the budget of {limit:.3e} (pass --allow-large to override)")]
    Budget { estimated: f64, limit: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Budget { .. } => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
