use std::path::PathBuf;

use eblp::EblpError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Config(String),

    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("corrupted model file {path}: {msg}")]
    Model { path: PathBuf, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] EblpError),
}

impl CliError {
    /// 0 success, 1 I/O, 2 parse, 3 degenerate data, 4 numeric failure,
    /// 5 invalid argument or dimension.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Parse { .. } | CliError::Config(_) | CliError::UnknownKeys(_) | CliError::Model { .. } => 2,
            CliError::Invalid(_) => 5,
            CliError::Core(e) => match e {
                EblpError::DegenerateCoordinates { .. } => 3,
                EblpError::Domain { .. } | EblpError::Linalg(_) => 4,
                EblpError::ModelState(_) => 2,
                EblpError::InvalidArgument(_)
                | EblpError::InvalidRank { .. }
                | EblpError::Index { .. }
                | EblpError::Shape(_) => 5,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
