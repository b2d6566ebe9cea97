use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] lsps_core::error::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: checksum mismatch or truncated file")]
    Checksum { path: PathBuf },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("config digest mismatch: checkpoint has {found}, config gives {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// Process exit code: 2 config/usage, 3 I/O, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        use lsps_core::error::Error as C;
        match self {
            Error::Core(C::Diverged { .. }) => 4,
            Error::Core(_) | Error::Config(_) | Error::Usage(_) | Error::DigestMismatch { .. } => 2,
            Error::Io { .. } | Error::Json { .. } | Error::Checksum { .. } | Error::Format { .. } | Error::Csv(_) => 3,
        }
    }
}
