use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, WftError>;

#[derive(Debug, Error)]
pub enum WftError {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A hyperparameter or argument is outside its admissible range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value in the input data is unusable. `row` and `col` are 1-based.
    #[error("data error at row {row}, column {col}: {message}")]
    Data {
        row: usize,
        col: usize,
        message: String,
    },

    /// A file does not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version: {0}")]
    Version(String),

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    /// The stored configuration disagrees with the stored parameters.
    #[error("validation error: {0}")]
    Validation(String),

    /// Non-finite gradient or loss during optimisation.
    #[error("training error: {0}")]
    Training(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl WftError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        WftError::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        WftError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        WftError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            WftError::Dimension(_) => "dimension",
            WftError::Config(_) => "config",
            WftError::Data { .. } => "data",
            WftError::Format(_) => "format",
            WftError::Version(_) => "version",
            WftError::Truncated(_) => "truncated",
            WftError::Validation(_) => "validation",
            WftError::Training(_) => "training",
            WftError::Contract(_) => "contract",
            WftError::Io { .. } => "io",
        }
    }
}
