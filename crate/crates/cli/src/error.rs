use std::path::PathBuf;

use irstd_core::Error as CoreError;

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration, 3 for data and 4 for
    /// numeric failures; 1 for anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Dimension(_) | CoreError::Contract(_) | CoreError::Accounting(_) => {
                    EXIT_CONFIG
                }
                CoreError::Numeric(_) | CoreError::DegenerateVariance(_) | CoreError::Determinism(_) => EXIT_NUMERIC,
                CoreError::Io { .. } => EXIT_IO,
                CoreError::DegenerateBox(_)
                | CoreError::Parse { .. }
                | CoreError::Range { .. }
                | CoreError::Split(_)
                | CoreError::Generation(_)
                | CoreError::Data(_)
                | CoreError::Region(_)
                | CoreError::UndefinedAp(_)
                | CoreError::Format(_) => EXIT_DATA,
            },
        }
    }
}
