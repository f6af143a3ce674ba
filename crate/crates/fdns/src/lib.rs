//! Configuration, field IO, deterministic oracles, thread-pool execution and
//! the command-line driver for `fdns-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checks;
pub mod cli;
pub mod config;
pub mod dump;
pub mod exec;
pub mod oracle;
pub mod output;
pub mod scenarios;

pub use exec::RayonExecutor;

use config::ConfigError;
use oracle::OracleError;

/// Exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILED: i32 = 1;
    pub const MAX_ITERATIONS: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] fdns_core::Error),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    /// 64 for anything the user can fix in the invocation or configuration.
    pub fn exit_code(&self) -> i32 {
        use fdns_core::Error as E;
        match self {
            RunError::Config(_) | RunError::Usage(_) => exit::USAGE,
            RunError::Core(E::Configuration(_) | E::Mesh(_) | E::Scenario(_) | E::Shape(_)) => exit::USAGE,
            RunError::Oracle(OracleError::Unsupported(_) | OracleError::NonZeroMean { .. }) => exit::USAGE,
            RunError::Oracle(OracleError::Core(E::Configuration(_) | E::Mesh(_) | E::Scenario(_))) => exit::USAGE,
            _ => exit::FAILED,
        }
    }
}
