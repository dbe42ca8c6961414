use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at {file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric/protocol.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => 3,
            Error::Shape(_)
            | Error::Aggregation(_)
            | Error::Protocol(_)
            | Error::Numeric(_)
            | Error::Metric(_) => 4,
        }
    }
}
