//! Configuration-driven experiment runner for the `svrb` solvers.
//!
//! Loads a flat key-value config, builds the problem, runs each
//! (solver, seed) pair and writes one trace CSV per run plus a summary.

pub mod config;
pub mod experiment;
pub mod output;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SVRB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "svrb_out";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::InvalidInput(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

/// `--out`, then `run.out`, then `$SVRB_OUT_DIR`, then `svrb_out`.
pub fn output_dir(flag: Option<PathBuf>, config: Option<PathBuf>) -> PathBuf {
    flag.or(config)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
