//! Benchmark harness: configuration, experiments, and result export for the
//! dynamics models and planner in `lnn-core`.

pub mod config;
pub mod experiments;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad invocation or configuration; maps to exit code 2.
    #[error("{0}")]
    Config(String),
    /// Failure while running; maps to exit code 3.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] lnn_core::CoreError),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(lnn_core::CoreError::Config(_)) => 2,
            _ => 3,
        }
    }
}
