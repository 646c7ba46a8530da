use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("stage `{stage}` needs output of `{needed}`, which is missing: run `shapool {needed}` first")]
    Dependency { stage: &'static str, needed: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] shapool::Error),
}

impl CliError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Dependency { .. } => 3,
            CliError::Io { .. } | CliError::Format { .. } => 4,
            CliError::Core(e) => match e {
                shapool::Error::Input(_) | shapool::Error::Shape(_) | shapool::Error::InsufficientModels { .. } => 5,
                shapool::Error::Numeric(_) => 6,
                _ => 7,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
