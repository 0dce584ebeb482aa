//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or malformed configuration (bad field, unknown key, broken invariant).
    #[error("config: {0}")]
    Config(String),

    /// Invalid input data (bad CSV cell, duplicate keys, schema mismatch).
    #[error("data: {0}")]
    Data(String),

    #[error("interpolation: {0}")]
    Interpolate(String),

    #[error("preprocess: {0}")]
    Preprocess(String),

    #[error("training: {0}")]
    Train(String),

    #[error("prediction: {0}")]
    Predict(String),

    #[error("manifest: {0}")]
    Manifest(String),

    /// A pipeline stage failed; carries the stage name per the abort contract.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid YAML: {message}")]
    Yaml { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: &str, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(source),
        }
    }

    /// True for errors a user fixes by correcting inputs (exit code 1);
    /// false for runtime failures (exit code 2).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::Data(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Yaml { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
