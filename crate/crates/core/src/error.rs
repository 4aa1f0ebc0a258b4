use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no valid records in {0}")]
    EmptyDataset(PathBuf),

    #[error("format error: {0}")]
    Format(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("pool of {requested} requested for user {user}, only {available} eligible items")]
    PoolTooLarge {
        user: String,
        requested: usize,
        available: usize,
    },

    #[error("cluster {cluster} has no name (top terms: {})", .terms.join(", "))]
    UnnamedCluster { cluster: usize, terms: Vec<String> },

    #[error("unbound placeholder `{0}`")]
    UnboundPlaceholder(String),

    #[error("stray brace at byte {0} in template")]
    StrayBrace(usize),

    #[error("transport failed after {} attempt(s): {}", .attempts.len(), .attempts.join("; "))]
    Transport { attempts: Vec<String> },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("could not parse LLM response: {0}")]
    Parse(String),

    #[error("API key variable `{0}` is not set")]
    MissingApiKey(String),

    #[error("corrupt record {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("missing {}; run `{producer}` first", .path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
