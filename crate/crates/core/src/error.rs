use std::path::PathBuf;

/// Unified error type for the whole pipeline.
///
/// The three variants map onto distinct process exit codes so that callers
/// (and shell scripts around the CLI) can tell misuse, bad data, and
/// numerical breakdown apart.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller violated an API or CLI contract: bad argument combination,
    /// out-of-range parameter, unknown configuration key.
    #[error("usage: {0}")]
    Usage(String),

    /// The input data is malformed or inconsistent: unparseable rows,
    /// mismatched identifier sets, invalid weights.
    #[error("data: {0}")]
    Data(String),

    /// A computation left the representable range or failed to make
    /// progress: non-finite loss, divergent optimizer.
    #[error("numerical: {0}")]
    Numerical(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
