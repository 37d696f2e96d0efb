use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI run, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot read config `{path}`: {source}")]
    ReadConfig {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("invalid config `{path}`: {source}")]
    ParseConfig {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },

    #[error("cannot write `{path}`: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] subgroup_shrink::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 2 for configuration problems, 1 for numerical or I/O failures.
    pub fn exit_code(&self) -> i32 {
        use subgroup_shrink::Error as E;
        match self {
            CliError::Config(_) | CliError::ReadConfig { .. } | CliError::ParseConfig { .. } => 2,
            CliError::Core(E::Config(_) | E::InvalidData(_) | E::DegenerateDesign { .. }) => 2,
            CliError::Core(E::Csv(_)) => 2,
            CliError::Write { .. } | CliError::Core(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
