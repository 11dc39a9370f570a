use std::path::PathBuf;

use thiserror::Error;

use crate::emd::EmdModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("non-manifold edges (shared by more than two faces): {edges:?}")]
    NonManifold { edges: Vec<(u32, u32)> },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("field error: {0}")]
    Field(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("non-finite value in {layer}")]
    Numeric { layer: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("inference error: {0}")]
    Inference(String),
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParam { name: &'static str, message: String },
    #[error("refinement declined: {0}")]
    RefinementDeclined(String),
    #[error("training diverged at step {step}; last good checkpoint is from step {checkpoint_step}")]
    Diverged {
        step: usize,
        checkpoint_step: usize,
        checkpoint: Box<EmdModel>,
    },
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn invalid(name: &'static str, message: impl Into<String>) -> Error {
        Error::InvalidParam {
            name,
            message: message.into(),
        }
    }
}

