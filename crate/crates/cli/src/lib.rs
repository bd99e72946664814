//! Experiment driver behind the `ncl-sim` binary.

pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;

use ncl_core::SimError;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration.
    Config(String),
    /// Demonstration input that yields no usable demos.
    DemoFormat(String),
    /// The simulation stopped on a collision, deadlock or missing solution.
    Sim(SimError),
    /// Some sweep runs failed; the sweep table was still written.
    RunsFailed(usize),
    Io(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::DemoFormat(_) => 2,
            CliError::Sim(_) | CliError::RunsFailed(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::DemoFormat(m) => write!(f, "demo format error: {m}"),
            CliError::Sim(e) => write!(f, "simulation failed: {e}"),
            CliError::RunsFailed(n) => write!(f, "{n} sweep rows had failed runs; see the status column"),
            CliError::Io(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<ncl_core::export::ExportError> for CliError {
    fn from(e: ncl_core::export::ExportError) -> Self {
        CliError::Io(e.into())
    }
}
