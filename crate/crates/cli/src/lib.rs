//! Batch driver for the switched-relaying simulator: experiment specs,
//! cached per-cell results, codebook design and analytic curves.

pub mod commands;
pub mod spec;

use std::process::ExitCode;

/// Failures of a CLI command, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed spec or arguments (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Filesystem failures (exit 1).
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Run(#[from] sr_precoding::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Io(_) | CliError::Run(_) => ExitCode::from(1),
        }
    }
}

pub(crate) fn io_err(what: impl std::fmt::Display, e: std::io::Error) -> CliError {
    CliError::Io(format!("{what}: {e}"))
}
