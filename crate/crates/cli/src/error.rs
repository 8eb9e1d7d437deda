use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("bad value for `{key}`: {detail}")]
    InvalidValue { key: String, detail: String },

    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: io::Error },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Usage(String),

    #[error("gradient check failed for: {}", .0.join(", "))]
    SuiteFailed(Vec<String>),

    #[error(transparent)]
    Core(#[from] anatomy_attn::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything that
    /// failed while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Usage(_) => 2,
            Self::SuiteFailed(_) | Self::Core(_) | Self::Io(_) => 1,
        }
    }
}
