use std::path::{Path, PathBuf};

use thiserror::Error;

/// Everything that can stop a command. All of these are input errors and
/// map to exit code 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}, line {line}: {message}")]
    InvalidValue { file: String, line: u64, message: String },
    #[error("{file}, line {line}: negative count {value}")]
    NegativeCount { file: String, line: u64, value: String },
    #[error("{file}, line {line}: population must be positive, found {value}")]
    ZeroPopulation { file: String, line: u64, value: f64 },
    #[error("{file}, line {line}: {what} index {index} leaves a gap; {missing} never appears")]
    NonContiguousIndex {
        file: String,
        line: u64,
        what: &'static str,
        index: usize,
        missing: usize,
    },
    #[error("{file}, line {line}: duplicate {what}")]
    Duplicate { file: String, line: u64, what: String },
    #[error("{file}: no count for area {area} at time {time}; panels must be complete")]
    MissingCell { file: String, area: usize, time: usize },
    #[error("{file}, line {line}: offset of area {area} changes over time; offsets must be constant per area")]
    TimeVaryingOffset { file: String, line: u64, area: usize },
    #[error("{file}: {message}")]
    Inconsistent { file: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: invalid JSON at `{pointer}`: {message}")]
    Json { file: String, pointer: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] heavyrush::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        CliError::Csv {
            file: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        1
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
