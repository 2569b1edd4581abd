//! Experiment harness: synthetic data, end-to-end pipelines, sweeps and
//! report files.

mod config;
mod run;
mod synthetic;

use crate::model::ModelError;
use crate::retrieval::RetrievalError;
use crate::selectors::SelectError;
use crate::store::StoreError;

pub use config::{DataConfig, ExperimentConfig, Sweep, CONFIG_VERSION};
pub use run::{
    build_prototypes, group_evaluate, load_data, obtain_model, overrides_from_json, overrides_to_json, run_experiment,
    run_with_data, sweep_alpha, sweep_n, sweep_table_csv, write_artifacts, ExperimentData, ExperimentOutput,
    SweepResult, SweepRow,
};
pub use synthetic::{generate_synthetic, SizeDistribution, SyntheticData, SyntheticSpec, PRESETS};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("malformed artifact: {0}")]
    Artifact(String),
}

impl BenchError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
