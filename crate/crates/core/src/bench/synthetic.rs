//! Synthetic labelled embeddings.
//!
//! A record of class `c` seen by camera `κ` is
//! `center_c + offset_κ + t·elongation·axis_c + noise·camera_noise[κ]·ε`
//! with `ε ~ N(0, I)` and `t ~ U(-1, 1)`. Centers, camera offsets and class
//! axes are drawn once per seed; gallery, query and training splits draw
//! fresh instances (the training split also draws its own classes).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::store::{CameraId, ClassId, EmbeddingRecord, EmbeddingSet};

/// How many gallery records each class gets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeDistribution {
    Fixed {
        n: usize,
    },
    Uniform {
        min: usize,
        max: usize,
    },
    /// `min + ⌊(max - min + 1)·u^exponent⌋` for `u ~ U(0, 1)`; exponents above
    /// one give many small classes and a few large ones.
    LongTail {
        min: usize,
        max: usize,
        exponent: f64,
    },
}

impl SizeDistribution {
    fn sample(&self, rng: &mut impl Rng) -> usize {
        match *self {
            SizeDistribution::Fixed { n } => n,
            SizeDistribution::Uniform { min, max } => rng.random_range(min..=max),
            SizeDistribution::LongTail { min, max, exponent } => {
                let u: f64 = rng.random();
                let span = (max - min + 1) as f64;
                (min + (span * u.powf(exponent)).floor() as usize).min(max)
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            SizeDistribution::Fixed { n: 0 } => Err("class size must be >= 1".into()),
            SizeDistribution::Uniform { min, max } | SizeDistribution::LongTail { min, max, .. }
                if min == 0 || max < min =>
            {
                Err(format!("bad class size range {min}..={max}"))
            }
            SizeDistribution::LongTail { exponent, .. } if !(exponent > 0.0 && exponent.is_finite()) => {
                Err("long-tail exponent must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub class_sizes: SizeDistribution,
    pub queries_per_class: usize,
    /// Classes in the separate training split (0 = same as `n_classes`).
    pub train_classes: usize,
    pub dim: usize,
    pub n_cameras: usize,
    /// Per-coordinate std of class centers.
    pub class_center_scale: f64,
    /// Per-coordinate std of instance noise.
    pub within_class_noise: f64,
    /// Per-coordinate std of the systematic per-camera shift.
    pub camera_offset_scale: f64,
    /// Half-length of each class's segment along its own random unit axis.
    pub elongation: f64,
    /// Noise multiplier per camera; missing entries are 1.
    pub camera_noise: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 200,
            class_sizes: SizeDistribution::Uniform { min: 4, max: 12 },
            queries_per_class: 2,
            train_classes: 0,
            dim: 32,
            n_cameras: 4,
            class_center_scale: 1.0,
            within_class_noise: 0.1,
            camera_offset_scale: 0.05,
            elongation: 0.0,
            camera_noise: Vec::new(),
            seed: 0,
        }
    }
}

/// Named specs shipped with the harness.
pub const PRESETS: &[&str] = &["desk", "tradeoff", "tiny", "perf"];

impl SyntheticSpec {
    pub fn preset(name: &str) -> Result<Self, BenchError> {
        Ok(match name {
            "desk" => SyntheticSpec::default(),
            "tradeoff" => SyntheticSpec {
                n_classes: 100,
                class_sizes: SizeDistribution::Uniform { min: 6, max: 12 },
                queries_per_class: 10,
                train_classes: 200,
                dim: 32,
                n_cameras: 4,
                class_center_scale: 0.7,
                within_class_noise: 0.15,
                camera_offset_scale: 0.8,
                elongation: 4.0,
                camera_noise: vec![1.0; 4],
                seed: 0,
            },
            "tiny" => SyntheticSpec {
                n_classes: 8,
                class_sizes: SizeDistribution::Uniform { min: 3, max: 6 },
                queries_per_class: 2,
                train_classes: 8,
                dim: 8,
                n_cameras: 2,
                ..SyntheticSpec::default()
            },
            "perf" => SyntheticSpec {
                n_classes: 500,
                class_sizes: SizeDistribution::Fixed { n: 20 },
                queries_per_class: 2,
                dim: 512,
                n_cameras: 6,
                class_center_scale: 1.0,
                within_class_noise: 0.5,
                ..SyntheticSpec::default()
            },
            other => {
                return Err(BenchError::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(format!("synthetic spec: {m}")));
        if self.n_classes == 0 || self.dim == 0 || self.n_cameras == 0 || self.queries_per_class == 0 {
            return bad("n_classes, queries_per_class, dim and n_cameras must be positive".into());
        }
        if self.n_cameras > u32::MAX as usize || self.n_classes > u32::MAX as usize {
            return bad("too many classes or cameras".into());
        }
        for (name, v) in [
            ("class_center_scale", self.class_center_scale),
            ("within_class_noise", self.within_class_noise),
            ("camera_offset_scale", self.camera_offset_scale),
            ("elongation", self.elongation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.camera_noise.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("camera_noise entries must be finite and non-negative".into());
        }
        match self.class_sizes.validate() {
            Ok(()) => Ok(()),
            Err(m) => bad(m),
        }
    }

    fn camera_noise(&self, cam: usize) -> f64 {
        self.camera_noise.get(cam).copied().unwrap_or(1.0)
    }
}

/// Gallery, queries and a disjoint-class training split.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub gallery: EmbeddingSet,
    pub queries: EmbeddingSet,
    pub train: EmbeddingSet,
}

mod stream {
    pub const CAMERAS: u64 = 10;
    pub const CLASSES: u64 = 11;
    pub const GALLERY: u64 = 12;
    pub const QUERIES: u64 = 13;
    pub const TRAIN_CLASSES: u64 = 14;
    pub const TRAIN: u64 = 15;
    pub const SIZES: u64 = 16;
    pub const TRAIN_SIZES: u64 = 17;
}

fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag << 56);
    r
}

fn gaussian(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

struct ClassModel {
    center: Vec<f64>,
    axis: Vec<f64>,
}

fn class_models(spec: &SyntheticSpec, n: usize, tag: u64) -> Vec<ClassModel> {
    let mut r = rng(spec.seed, tag);
    (0..n)
        .map(|_| {
            let center = gaussian(&mut r, spec.dim, spec.class_center_scale);
            let raw = gaussian(&mut r, spec.dim, 1.0);
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            ClassModel {
                center,
                axis: raw.iter().map(|v| v / norm).collect(),
            }
        })
        .collect()
}

fn draw_instances(
    spec: &SyntheticSpec,
    classes: &[ClassModel],
    offsets: &[Vec<f64>],
    counts: &[usize],
    tag: u64,
    prefix: &str,
) -> EmbeddingSet {
    let mut r = rng(spec.seed, tag);
    let mut records = Vec::new();
    for (c, (model, &count)) in classes.iter().zip(counts).enumerate() {
        for i in 0..count {
            let cam = r.random_range(0..spec.n_cameras);
            let t: f64 = if spec.elongation > 0.0 {
                r.random_range(-1.0..=1.0)
            } else {
                0.0
            };
            let noise = spec.within_class_noise * spec.camera_noise(cam);
            let eps = gaussian(&mut r, spec.dim, noise);
            let vector = (0..spec.dim)
                .map(|d| model.center[d] + offsets[cam][d] + t * spec.elongation * model.axis[d] + eps[d])
                .collect();
            records.push(EmbeddingRecord {
                id: format!("{prefix}{c}_{i}"),
                vector,
                class_id: ClassId(c as u32),
                camera_id: CameraId(cam as u32),
            });
        }
    }
    let labels = crate::store::LabelMap::numeric(classes.len());
    let cameras = crate::store::LabelMap::numeric(spec.n_cameras);
    EmbeddingSet::new(records, labels, cameras).expect("generated records are valid")
}

/// Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, BenchError> {
    spec.validate()?;
    let mut cam_rng = rng(spec.seed, stream::CAMERAS);
    let offsets: Vec<Vec<f64>> = (0..spec.n_cameras)
        .map(|_| gaussian(&mut cam_rng, spec.dim, spec.camera_offset_scale))
        .collect();

    let classes = class_models(spec, spec.n_classes, stream::CLASSES);
    let mut size_rng = rng(spec.seed, stream::SIZES);
    let sizes: Vec<usize> = (0..spec.n_classes)
        .map(|_| spec.class_sizes.sample(&mut size_rng))
        .collect();
    let gallery = draw_instances(spec, &classes, &offsets, &sizes, stream::GALLERY, "g");
    let queries = draw_instances(
        spec,
        &classes,
        &offsets,
        &vec![spec.queries_per_class; spec.n_classes],
        stream::QUERIES,
        "q",
    );

    let n_train = if spec.train_classes == 0 {
        spec.n_classes
    } else {
        spec.train_classes
    };
    let train_classes = class_models(spec, n_train, stream::TRAIN_CLASSES);
    let mut train_size_rng = rng(spec.seed, stream::TRAIN_SIZES);
    let train_sizes: Vec<usize> = (0..n_train)
        .map(|_| spec.class_sizes.sample(&mut train_size_rng))
        .collect();
    let train = draw_instances(spec, &train_classes, &offsets, &train_sizes, stream::TRAIN, "t");

    Ok(SyntheticData {
        gallery,
        queries,
        train,
    })
}
