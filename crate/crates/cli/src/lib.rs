//! Library half of the `cane` executable: configuration, command bodies,
//! sweeps and text rendering. `main.rs` only parses arguments.

pub mod commands;
pub mod config;
pub mod render;
pub mod sweep;

use cane_core::CaneError;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] CaneError),
}

impl CliError {
    /// 2 for bad configuration, 3 for unreadable or malformed data, 4 for
    /// anything that fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &CaneError) -> i32 {
    match (e, e.root()) {
        (_, CaneError::Io { .. } | CaneError::Format { .. }) => EXIT_DATA,
        (CaneError::Argument(_), _) => EXIT_CONFIG,
        (CaneError::Stage { stage: "config", .. }, CaneError::Argument(_)) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
