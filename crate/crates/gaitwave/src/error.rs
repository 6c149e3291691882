use std::path::{Path, PathBuf};

use gaitwave_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: config, spec, manifest or results file.
    #[error("{0}")]
    Validation(String),
    #[error("refusing to overwrite {0} (pass --force or --resume)")]
    Refused(PathBuf),
    /// Training or other failure after inputs were accepted.
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: truncated payload: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Format { .. } | CliError::Truncated { .. } => 2,
            CliError::Refused(_) => 3,
            CliError::Runtime(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::Diverged { .. } | CoreError::RepeatAborted { .. } => 1,
                _ => 2,
            },
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl std::fmt::Display) -> CliError {
        CliError::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }
}
