use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("embedding line {line}: {message}")]
    Embedding { line: usize, message: String },

    #[error("no {modality} embedding for scene {scene_id}")]
    MissingEmbedding { scene_id: String, modality: String },

    #[error("unknown scene type {0:?}")]
    UnknownSceneType(String),

    #[error("unknown object class {0:?}")]
    UnknownClass(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("cosine distance of a zero-norm vector")]
    ZeroNorm,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("metric: {0}")]
    Metric(String),
}

impl Error {
    /// Stable short identifier for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::Record { .. } => "record",
            Error::Json { .. } => "json",
            Error::Io { .. } => "io",
            Error::Embedding { .. } => "embedding",
            Error::MissingEmbedding { .. } => "missing_embedding",
            Error::UnknownSceneType(_) => "unknown_scene_type",
            Error::UnknownClass(_) => "unknown_class",
            Error::Empty(_) => "empty",
            Error::ZeroNorm => "zero_norm",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Metric(_) => "metric",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
