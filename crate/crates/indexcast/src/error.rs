use std::path::{Path, PathBuf};

use indexcast_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    /// A core error raised while reading a particular file.
    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: CoreError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// An artifact that exists but cannot be decoded.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("missing {artifact}: run `indexcast {stage}` first")]
    MissingUpstream { artifact: String, stage: String },
    #[error("stale artifact: {0}")]
    Stale(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path) -> impl FnOnce(CoreError) -> Error + '_ {
        move |source| Error::Input {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl std::fmt::Display) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    fn core(&self) -> Option<&CoreError> {
        match self {
            Error::Core(e) | Error::Input { source: e, .. } => Some(e),
            _ => None,
        }
    }

    /// Process exit status: 2 validation, 3 numeric, 4 protocol.
    pub fn exit_code(&self) -> u8 {
        match self.core() {
            Some(CoreError::Numeric(_) | CoreError::Training { .. }) => 3,
            Some(CoreError::Protocol(_)) => 4,
            _ => 2,
        }
    }
}
