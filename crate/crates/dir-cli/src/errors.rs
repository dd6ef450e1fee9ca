//! CLI error type with the exit-code contract:
//! 0 success, 2 usage, 3 missing input, 4 incompatibility, 5 not found.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    MissingInput(String),
    Incompatible(String),
    NotFound(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Incompatible(_) => 4,
            CliError::NotFound(_) => 5,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::MissingInput(m) => write!(f, "missing input: {m}"),
            CliError::Incompatible(m) => write!(f, "incompatible: {m}"),
            CliError::NotFound(m) => write!(f, "not found: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dir_core::graph::GraphError> for CliError {
    fn from(e: dir_core::graph::GraphError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<dir_core::engine::EngineError> for CliError {
    fn from(e: dir_core::engine::EngineError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<dir_core::nn::CheckpointError> for CliError {
    fn from(e: dir_core::nn::CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("json error: {e}"))
    }
}
