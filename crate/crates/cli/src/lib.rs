//! Pipeline plumbing behind the `phrasim` binary: run configuration,
//! stage orchestration, and artifact bookkeeping.

pub mod config;
pub mod pipeline;

use std::path::PathBuf;

/// Errors surfaced by the command-line layer. The variant decides the
/// process exit code: configuration and usage problems exit 1, data and
/// artifact problems exit 2, numeric divergence during training exits 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] phrasim_core::Error),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io { path: path.into(), source }
    }

    fn in_stage(self, stage: &'static str) -> CliError {
        CliError::Stage { stage, source: Box::new(self) }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Core(phrasim_core::Error::NonFiniteLoss(_)) => 3,
            CliError::Core(_) => 2,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
