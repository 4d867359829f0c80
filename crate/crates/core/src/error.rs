use alloc::string::String;

/// Errors raised by the pipeline stages.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input violates a documented invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// Node or run configuration refers to something that does not exist.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed text input at a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// A computation produced a non-finite or undefined value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Optimisation diverged.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },
    /// Walk-forward protocol violation (an artifact used outside its range).
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
