use std::path::PathBuf;

use cdnet_tensor::TensorError;

pub type Result<T> = std::result::Result<T, CdnetError>;

#[derive(Debug, thiserror::Error)]
pub enum CdnetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {malformed} of {total} lines malformed (over 1% threshold)")]
    DataQuality {
        path: PathBuf,
        malformed: usize,
        total: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown config key {key:?}")]
    UnknownConfigKey { key: String },

    #[error("config key {key:?}: cannot parse {value:?}")]
    BadConfigValue { key: String, value: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("sample cache: {0}")]
    Cache(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}
