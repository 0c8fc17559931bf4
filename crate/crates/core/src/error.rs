use std::path::PathBuf;

use thiserror::Error;

/// Error type shared across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no database file for db_id '{db_id}' under {root}")]
    DbNotFound { db_id: String, root: PathBuf },
    #[error("db_id '{0}' absent from the schema description file")]
    UnknownDbId(String),
    #[error("sqlite error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("llm transport error: {0}")]
    Transport(String),
    #[error("scripted backend has no queued response for tag '{0}'")]
    ScriptExhausted(String),
    #[error("strict replay miss: no cache entry for key {0}")]
    ReplayMiss(String),
    #[error("nothing extractable: {0}")]
    Extraction(String),
    #[error("sql generation failed: {0}")]
    Generation(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
