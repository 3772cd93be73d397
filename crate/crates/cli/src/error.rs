use std::path::{Path, PathBuf};

use thiserror::Error;

/// Command failures grouped by cause; each maps to a distinct exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Core(#[from] nodebias::Error),
    #[error("reproduction mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use nodebias::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Input(_) | CliError::Io { .. } => 3,
            CliError::Core(E::Io { .. } | E::Parse { .. }) => 3,
            CliError::Core(
                E::Divergence { .. } | E::NonConvergence { .. } | E::SinkhornNonConvergence { .. } | E::Degenerate(_),
            ) => 4,
            CliError::Core(_) => 5,
            CliError::Mismatch(_) => 6,
        }
    }
}
