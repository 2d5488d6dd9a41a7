use std::path::PathBuf;

use mcd_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error("sample `{sample}`: {msg}")]
    Sample { sample: String, msg: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("model predicts {model} classes but the data has {data}")]
    ClassMismatch { model: usize, data: usize },

    #[error("no gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (samples {ids:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ids: Vec<String>,
        loss: f64,
    },
}

impl Error {
    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn sample(sample: &str, msg: impl Into<String>) -> Self {
        Error::Sample {
            sample: sample.to_string(),
            msg: msg.into(),
        }
    }
}
