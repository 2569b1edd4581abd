//! Non-learned prototype selectors: instance, centroid, k-centroid, FPS and
//! α-FPS.
//!
//! Every selector works class by class and is a pure function of the class
//! vectors and the [`SelectorConfig`]; classes are processed in parallel and
//! collected in class order, so results never depend on scheduling.

pub mod fps;
pub mod kmeans;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::prototypes::{PrototypeSet, SelectorTag};
use crate::store::{ClassId, EmbeddingSet};
use crate::vector::mean;

pub use fps::{alpha_fps, fps_from_centroid, maximin_order, AlphaFps, AlphaStep};
pub use kmeans::{kmeans, KMeans};

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("cannot select prototypes from an empty set")]
    EmptyInput,
    #[error("invalid selector config: {0}")]
    InvalidConfig(String),
    #[error("selector `{0}` needs a trained model; use the gcp module")]
    NeedsModel(SelectorTag),
}

/// Parameters shared by the non-learned selectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub method: SelectorTag,
    /// Prototypes per class (`N`). For α-FPS this is the number of sampling
    /// iterations, so a class gets up to `N + 1` prototypes counting the
    /// centroid.
    pub n_prototypes: usize,
    /// Interpolation factor of α-FPS, in `[0, 1]`. The 0.5 default is arbitrary.
    pub alpha: f64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            method: SelectorTag::Centroid,
            n_prototypes: 3,
            alpha: 0.5,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-9,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn with_method(method: SelectorTag) -> Self {
        SelectorConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        if self.n_prototypes == 0 {
            return Err(SelectError::InvalidConfig("n_prototypes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SelectError::InvalidConfig(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.kmeans_max_iters == 0 {
            return Err(SelectError::InvalidConfig("kmeans_max_iters must be >= 1".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if !(self.kmeans_tol > 0.0) {
            return Err(SelectError::InvalidConfig("kmeans_tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Prototypes for one class plus whether the selector fully converged.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSelection {
    pub prototypes: Vec<Vec<f64>>,
    pub converged: bool,
}

/// Run the configured selector on one class's vectors.
///
/// `class` only seeds the per-class random stream used by k-means.
pub fn select_points(points: &[&[f64]], cfg: &SelectorConfig, class: ClassId) -> Result<ClassSelection, SelectError> {
    if points.is_empty() {
        return Err(SelectError::EmptyInput);
    }
    let dim = points[0].len();
    let owned = |idx: Vec<usize>| idx.into_iter().map(|i| points[i].to_vec()).collect();
    let done = |prototypes| ClassSelection {
        prototypes,
        converged: true,
    };
    Ok(match cfg.method {
        SelectorTag::Instance => done(points.iter().map(|p| p.to_vec()).collect()),
        SelectorTag::Centroid => done(vec![mean(points.iter().copied(), dim)]),
        SelectorTag::Kcentroid => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::from(class.0));
            let k = cfg.n_prototypes.min(points.len());
            let out = kmeans(points, k, cfg.kmeans_max_iters, cfg.kmeans_tol, &mut rng);
            ClassSelection {
                prototypes: out.centroids,
                converged: out.converged,
            }
        }
        SelectorTag::Fps => done(owned(fps_from_centroid(points, cfg.n_prototypes))),
        SelectorTag::AlphaFps => done(alpha_fps(points, cfg.n_prototypes, cfg.alpha).prototypes),
        SelectorTag::Gcp => return Err(SelectError::NeedsModel(SelectorTag::Gcp)),
    })
}

/// Apply the configured selector to every class of `set`.
pub fn select(set: &EmbeddingSet, cfg: &SelectorConfig) -> Result<PrototypeSet, SelectError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(SelectError::EmptyInput);
    }
    let classes: Vec<ClassId> = set.class_ids().collect();
    let results = classes
        .par_iter()
        .map(|&c| {
            let points = set.class_vectors(c).expect("class listed by the set");
            select_points(&points, cfg, c).map(|s| (c, s))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = PrototypeSet::new(cfg.method, set.dim());
    let mut unconverged = Vec::new();
    for (c, s) in results {
        if !s.converged {
            unconverged.push(c.0);
        }
        out.per_class.insert(c, s.prototypes);
    }
    match cfg.method {
        SelectorTag::Instance | SelectorTag::Centroid => {}
        SelectorTag::Kcentroid => {
            out.echo("n_prototypes", cfg.n_prototypes);
            out.echo("kmeans_max_iters", cfg.kmeans_max_iters);
            out.echo("kmeans_tol", cfg.kmeans_tol);
            out.echo("seed", cfg.seed);
            out.echo("kmeans_unconverged_classes", unconverged);
        }
        SelectorTag::Fps => out.echo("n_prototypes", cfg.n_prototypes),
        SelectorTag::AlphaFps => {
            out.echo("n_prototypes", cfg.n_prototypes);
            out.echo("alpha", cfg.alpha);
            out.echo("count_includes_centroid", true);
        }
        SelectorTag::Gcp => unreachable!("rejected by select_points"),
    }
    out.echo("total_prototypes", out.total());
    Ok(out)
}

pub fn select_instance(set: &EmbeddingSet) -> Result<PrototypeSet, SelectError> {
    select(set, &SelectorConfig::with_method(SelectorTag::Instance))
}

pub fn select_centroid(set: &EmbeddingSet) -> Result<PrototypeSet, SelectError> {
    select(set, &SelectorConfig::with_method(SelectorTag::Centroid))
}

pub fn select_kcentroid(set: &EmbeddingSet, cfg: &SelectorConfig) -> Result<PrototypeSet, SelectError> {
    select(
        set,
        &SelectorConfig {
            method: SelectorTag::Kcentroid,
            ..cfg.clone()
        },
    )
}

pub fn select_fps(set: &EmbeddingSet, cfg: &SelectorConfig) -> Result<PrototypeSet, SelectError> {
    select(
        set,
        &SelectorConfig {
            method: SelectorTag::Fps,
            ..cfg.clone()
        },
    )
}

pub fn select_alpha_fps(set: &EmbeddingSet, cfg: &SelectorConfig) -> Result<PrototypeSet, SelectError> {
    select(
        set,
        &SelectorConfig {
            method: SelectorTag::AlphaFps,
            ..cfg.clone()
        },
    )
}
