use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{key}`{}{}", line.map(|l| format!(" on line {l}")).unwrap_or_default(), suggestion.as_ref().map(|s| format!("; did you mean `{s}`?")).unwrap_or_default())]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
        line: Option<usize>,
    },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot parse level range `{input}` at position {position}: {reason}")]
    Range {
        input: String,
        position: usize,
        reason: String,
    },
    #[error("line {line} is not `key = value`: `{text}`")]
    Syntax { line: usize, text: String },
    #[error("cannot read {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    ChecksFailed(String),
    #[error("integrity error: checksum of `{file}` does not match the manifest")]
    Integrity { file: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl CliError {
    /// 0 success, 1 check failure, 2 usage, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) | CliError::Integrity { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io { .. } | CliError::Format { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
