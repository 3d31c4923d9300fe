use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A network architecture that cannot exist (empty layer list, zero-sized layer).
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// Dimension mismatch between an input and what the callee expects.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Invalid configuration value (non-positive dt, empty dataset, bad kind tag, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure that must surface rather than be masked
    /// (singular mass matrix, diverging loss, non-finite state).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A caller violated an operation contract (e.g. non-symmetric input to eig_sym).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Planning produced no usable sample.
    #[error("planning failure: {0}")]
    Planning(String),

    /// Malformed checkpoint or dataset file.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
