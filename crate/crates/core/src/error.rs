use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("captioning failed: {0}")]
    Captioning(String),

    #[error("cannot encode payload: {0}")]
    Encoding(String),

    /// CRC mismatch: the stream was damaged and not repaired by the FEC.
    #[error("integrity check failed (crc {expected:#010x} != {actual:#010x})")]
    Integrity { expected: u32, actual: u32 },

    #[error("malformed bitstream: {0}")]
    Format(String),

    #[error("ldpc construction failed: {0}")]
    Construction(String),

    #[error("restoration failed ({backend}): {message}")]
    Restoration { backend: String, message: String },

    #[error("metric `{name}` failed: {message}")]
    Metric { name: String, message: String },

    #[error("unfair comparison: {0}")]
    Fairness(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
