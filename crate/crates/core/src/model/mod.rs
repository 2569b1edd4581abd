//! Learned prototype generator: a small pre-norm transformer decoder that
//! reads a class's gallery vectors (plus camera embeddings) as memory and
//! emits prototypes one at a time.
//!
//! Gradients are computed by hand (see [`layers`]); everything runs in `f64`
//! on the CPU.

mod checkpoint;
mod decoder;
pub mod layers;
pub mod loss;
mod params;
mod train;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::prototypes::{PrototypeSet, SelectorTag};
use crate::store::{CameraId, ClassId, EmbeddingSet, StoreError};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use decoder::{accumulate_camera_grad, build_memory, generate_with, memory_tokens, Generation, Memory};
pub use params::{Attention, DecoderBlock, FeedForward, LayerNorm, Linear, ModelParams};
pub use train::{
    batch_loss_and_grad, batch_prototypes, plan_epoch, sgd_step, train, BatchLoss, BatchPlan, ClassPlan, TrainingTrace,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("camera {camera} has no embedding (model has {n_cameras} cameras)")]
    UnknownCamera { camera: CameraId, n_cameras: usize },
    #[error("dimension mismatch: model expects {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("not enough training data: {0}")]
    NotEnoughData(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture, loss and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcpConfig {
    pub dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    /// Prototypes generated per class during training.
    pub n_prototypes: usize,
    pub margin: f64,
    /// Weight of the prototype-spacing term.
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_classes: usize,
    pub instances_per_class: usize,
    pub epochs: usize,
    pub n_cameras: usize,
    /// Std of the Gaussian used for camera embeddings and the start token.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for GcpConfig {
    fn default() -> Self {
        GcpConfig {
            dim: 32,
            n_blocks: 2,
            n_heads: 4,
            ffn_dim: 64,
            dropout_rate: 0.2,
            n_prototypes: 3,
            margin: 1.2,
            lambda: 1.0,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_classes: 16,
            instances_per_class: 8,
            epochs: 20,
            n_cameras: 1,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl GcpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.dim == 0 || self.n_heads == 0 || self.n_blocks == 0 || self.ffn_dim == 0 {
            return bad("dim, n_blocks, n_heads and ffn_dim must be positive".into());
        }
        if !self.dim.is_multiple_of(self.n_heads) {
            return bad(format!("dim {} not divisible by n_heads {}", self.dim, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.n_prototypes == 0 {
            return bad("n_prototypes must be >= 1".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("init_std", self.init_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.batch_classes < 2 {
            return bad("batch_classes must be >= 2 (negatives come from other classes)".into());
        }
        if self.instances_per_class == 0 || self.epochs == 0 || self.n_cameras == 0 {
            return bad("instances_per_class, epochs and n_cameras must be positive".into());
        }
        Ok(())
    }
}

/// Random-stream tags; every random draw in the model comes from
/// `ChaCha8(seed)` on one of these streams.
pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

pub(crate) fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 56) | (index & ((1 << 56) - 1)));
    rng
}

/// A configured decoder and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GcpModel {
    pub config: GcpConfig,
    pub params: ModelParams,
}

impl GcpModel {
    /// Freshly initialized model, deterministic in `config.seed`.
    pub fn new(config: GcpConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, &mut substream(config.seed, streams::INIT, 0));
        Ok(GcpModel { config, params })
    }

    pub fn build_memory(
        &self,
        set: &EmbeddingSet,
        class: ClassId,
        excluded_camera: Option<CameraId>,
    ) -> Result<Memory, ModelError> {
        if set.dim() != self.config.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.dim,
                found: set.dim(),
            });
        }
        build_memory(set, &self.params, class, excluded_camera)
    }

    /// Inference-mode generation of `n` prototypes.
    pub fn generate_prototypes(&self, memory: &Memory, n: usize) -> Vec<Vec<f64>> {
        self.generate_tokens(&memory.tokens, n)
    }

    pub fn generate_tokens(&self, tokens: &Array2<f64>, n: usize) -> Vec<Vec<f64>> {
        generate_with::<ChaCha8Rng>(&self.params, self.config.n_heads, tokens, n, None)
            .prototypes
            .into_iter()
            .map(|p| p.to_vec())
            .collect()
    }

    /// Prototypes for one class; `n` is capped by the usable memory length.
    /// Returns the prototypes and whether the camera filter fell back to the
    /// full class.
    pub fn class_prototypes(
        &self,
        set: &EmbeddingSet,
        class: ClassId,
        n: usize,
        excluded_camera: Option<CameraId>,
    ) -> Result<(Vec<Vec<f64>>, bool), ModelError> {
        let memory = self.build_memory(set, class, excluded_camera)?;
        let count = n.min(memory.len());
        Ok((self.generate_prototypes(&memory, count), memory.fallback))
    }
}

/// Generate `n` prototypes for every class of `set`.
///
/// When `query_camera_by_class` names a camera for a class, that class's
/// memory excludes the camera's records; other classes use all records.
pub fn select_gcp(
    set: &EmbeddingSet,
    model: &GcpModel,
    n: usize,
    query_camera_by_class: Option<&BTreeMap<ClassId, CameraId>>,
) -> Result<PrototypeSet, ModelError> {
    if n == 0 {
        return Err(ModelError::InvalidConfig("n must be >= 1".into()));
    }
    let classes: Vec<ClassId> = set.class_ids().collect();
    let results = classes
        .par_iter()
        .map(|&c| {
            let excluded = query_camera_by_class.and_then(|m| m.get(&c).copied());
            model.class_prototypes(set, c, n, excluded).map(|r| (c, r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = PrototypeSet::new(SelectorTag::Gcp, set.dim());
    let mut reduced = Vec::new();
    let mut fallback = Vec::new();
    for (c, (protos, fell_back)) in results {
        if protos.len() < n {
            reduced.push(serde_json::json!({ "class": c.0, "count": protos.len() }));
        }
        if fell_back {
            fallback.push(c.0);
        }
        out.per_class.insert(c, protos);
    }
    out.echo("n_prototypes", n);
    out.echo("reduced_classes", reduced);
    out.echo("camera_filter_fallback_classes", fallback);
    out.echo("model_seed", model.config.seed);
    out.echo("total_prototypes", out.total());
    Ok(out)
}
