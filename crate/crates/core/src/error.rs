use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("header truncated: {0} bytes")]
    Truncated(usize),
    #[error("unsupported data offset {0} (options are not modelled)")]
    DataOffset(u8),
    #[error("reserved flag bits set: {0:#06x}")]
    ReservedFlagBits(u16),
}

/// Scenario configuration problem. `line` is 1-based when the error comes
/// from a config file.
#[derive(Debug, Error, PartialEq)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }

    pub fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("fairness index undefined for an empty or all-zero throughput set")]
    UndefinedFairness,
    #[error("confidence interval needs at least two runs, got {0}")]
    TooFewRuns(usize),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output directory {0} already exists (use --force to overwrite)")]
    OutputExists(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
