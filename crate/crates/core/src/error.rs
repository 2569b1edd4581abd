//! Crate-wide error type.

use crate::bench::BenchError;
use crate::model::ModelError;
use crate::retrieval::RetrievalError;
use crate::selectors::SelectError;
use crate::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

impl Error {
    /// Short machine-friendly category for CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Store(e) => store_category(e),
            Error::Select(_) => "selector",
            Error::Model(e) => model_category(e),
            Error::Retrieval(_) => "retrieval",
            Error::Bench(e) => match e {
                BenchError::Config(_) => "config",
                BenchError::Io { .. } => "io",
                BenchError::Store(e) => store_category(e),
                BenchError::Select(_) => "selector",
                BenchError::Model(e) => model_category(e),
                BenchError::Retrieval(_) => "retrieval",
                BenchError::Artifact(_) => "data",
            },
        }
    }
}

fn store_category(e: &StoreError) -> &'static str {
    match e {
        StoreError::Io { .. } => "io",
        _ => "data",
    }
}

fn model_category(e: &ModelError) -> &'static str {
    match e {
        ModelError::Io { .. } => "io",
        ModelError::InvalidConfig(_) => "config",
        ModelError::Store(e) => store_category(e),
        _ => "model",
    }
}
