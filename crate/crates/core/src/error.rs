use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-deterministic closure: {0}")]
    Determinism(String),
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("range error at line {line}: {msg}")]
    Range { line: usize, msg: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("region error: {0}")]
    Region(String),
    #[error("average precision undefined: {0}")]
    UndefinedAp(String),
    #[error("accounting error: {0}")]
    Accounting(String),
    #[error("snapshot format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
