use std::path::PathBuf;

/// Errors raised by the toolkit. Variants are grouped by failure class so
/// callers (the CLI in particular) can map them onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("insufficient models: need at least {needed} {kind} scores, got {got}")]
    InsufficientModels {
        kind: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("parse error in {path}:{line}, field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
