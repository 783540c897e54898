use std::path::PathBuf;

use photogeo_core::Error as CoreError;

/// Exit status for configuration and input errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for an optimization that diverged after its retry.
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("missing file: {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {msg}", path.display())]
    Decode { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn decode(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Decode { path: path.into(), msg: msg.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Missing(_) | Error::Decode { .. } => EXIT_CONFIG,
            Error::Io { .. } => EXIT_RUNTIME,
            Error::Core(e) => match e.root() {
                CoreError::Divergence => EXIT_DIVERGED,
                CoreError::InvalidConfig(_)
                | CoreError::InvalidPrior(_)
                | CoreError::InvalidFov(_)
                | CoreError::InvalidSize { .. }
                | CoreError::NonPsdCovariance(_)
                | CoreError::ShapeMismatch { .. } => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
