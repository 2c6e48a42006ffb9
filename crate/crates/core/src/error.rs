use std::path::Path;

/// Crate-wide error type. Shape problems and contract violations carry the
/// operation name so callers can tell which layer of a deep net misfired.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dim { op: String, detail: String },

    #[error("contract violation in {op}: {detail}")]
    Contract { op: String, detail: String },

    #[error("parse error at {path} line {line}: {detail}")]
    Parse {
        path: String,
        line: u64,
        detail: String,
    },

    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn dim(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dim {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn contract(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Contract {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
