use std::path::Path;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad arguments or configuration (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Missing, unreadable or corrupt input files (exit 2).
    #[error("{0}")]
    Data(String),
    /// NaN/Inf or a failed numerical gate (exit 3).
    #[error("{0}")]
    Numeric(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        AppError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<ssb_core::Error> for AppError {
    fn from(e: ssb_core::Error) -> Self {
        use ssb_core::Error as E;
        match e {
            E::NonFinite { .. } => AppError::Numeric(e.to_string()),
            E::Checkpoint(_) | E::LabelOutOfRange { .. } | E::EmptyBatch => AppError::Data(e.to_string()),
            _ => AppError::Usage(e.to_string()),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
