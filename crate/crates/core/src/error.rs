use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem in a hierarchy document; `path` names the offending node.
    #[error("invalid hierarchy at `{path}`: {reason}")]
    Hierarchy { path: String, reason: String },

    #[error("unknown sense label `{0}`")]
    UnknownLabel(String),

    #[error("non-terminal label `{0}`: annotation must reach a terminal sense")]
    NonTerminal(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; batch ids: {}", batch_ids.join(","))]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch_ids: Vec<String>,
    },

    #[error("missing predictions for {} rel_id(s): {}", .0.len(), .0.join(","))]
    MissingPredictions(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn hierarchy(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Hierarchy {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
