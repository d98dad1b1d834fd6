use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid class split: {0}")]
    Split(String),

    #[error("invalid label data: {0}")]
    Label(String),

    #[error("episode sampling failed: {0}")]
    Sampling(String),

    #[error("label access denied for class {class}: not visible in this view")]
    AccessDenied { class: u8 },

    #[error("non-finite loss at iteration {iteration}: comb={comb} de={de}{}", snapshot.as_ref().map(|p| format!(" (snapshot: {})", p.display())).unwrap_or_default())]
    NonFinite {
        iteration: usize,
        comb: f64,
        de: f64,
        snapshot: Option<PathBuf>,
    },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
