use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] chiarella_core::Error),

    #[error("{failed} of {total} assets failed, see {manifest}")]
    Partial {
        failed: usize,
        total: usize,
        manifest: PathBuf,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Json { .. } => EXIT_INPUT,
            CliError::Core(e) if e.is_input_error() => EXIT_INPUT,
            CliError::Core(_) => EXIT_NUMERICAL,
            CliError::Partial { .. } => EXIT_PARTIAL,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        let core = chiarella_core::Error::InvalidParams("k".into());
        assert_eq!(CliError::from(core).exit_code(), 2);
        let core = chiarella_core::Error::Numerical("nan".into());
        assert_eq!(CliError::from(core).exit_code(), 3);
        let p = CliError::Partial {
            failed: 1,
            total: 3,
            manifest: "f.json".into(),
        };
        assert_eq!(p.exit_code(), 4);
    }
}
