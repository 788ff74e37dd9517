use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::store::LayerId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid map configuration: {0}")]
    Invalid(String),
    #[error("layer {0:?} is required but not enabled on the map")]
    MissingLayer(LayerId),
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("non-finite coordinate {0:?}")]
    NonFinite([f64; 3]),
    #[error("probability {0} is outside (0, 1)")]
    Probability(f64),
    #[error("failed to allocate region buffers ({0} bytes)")]
    Allocation(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl MapError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        MapError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        MapError::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = MapError> = std::result::Result<T, E>;
