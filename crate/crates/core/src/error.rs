use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("shape mismatch in {}: {detail}", path.display())]
    ShapeMismatch { path: PathBuf, detail: String },

    #[error("checksum mismatch in {}", .0.display())]
    Checksum(PathBuf),

    #[error("unsupported format version {found} in {} (expected {expected})", path.display())]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Torch(#[from] tch::TchError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 1,
            Error::Data(_) | Error::Torch(_) => 1,
            Error::Dimension(_)
            | Error::Argument(_)
            | Error::Config(_)
            | Error::Validation(_)
            | Error::Capability(_) => 2,
            Error::MissingFile(_)
            | Error::MissingFiles(_)
            | Error::ShapeMismatch { .. }
            | Error::Checksum(_)
            | Error::Version { .. }
            | Error::Io { .. }
            | Error::Json { .. } => 3,
        }
    }
}
