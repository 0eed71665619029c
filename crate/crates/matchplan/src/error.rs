use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("corrupt index file {path}: {msg}")]
    CorruptIndex { path: PathBuf, msg: String },

    #[error("inconsistent accounting: {0}")]
    Accounting(String),

    #[error("missing upstream artifact for stage {stage}: {path}")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
