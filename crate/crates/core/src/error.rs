use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {locator}: {message}")]
    Parse { locator: String, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least {required} points, got {got}")]
    NotEnoughPoints { required: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("category {0} has no geometric template; skip geometry for it")]
    NoTemplate(u64),

    #[error("unknown category {0}")]
    UnknownCategory(u64),

    #[error("insufficient samples: need at least {required}, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("rejected sample: {0}")]
    RejectedSample(String),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("infeasible split; blocking categories: {categories:?}")]
    InfeasibleSplit { categories: Vec<u64> },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(locator: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            locator: locator.into(),
            message: message.to_string(),
        }
    }
}
