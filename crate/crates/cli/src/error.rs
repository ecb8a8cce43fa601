use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] elsym_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for usage, configuration, input and I/O problems; 3 for numerical
    /// failures at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(elsym_core::Error::TrainingDiverged { .. })
            | CliError::Core(elsym_core::Error::Numerical { .. }) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
