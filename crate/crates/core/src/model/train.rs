//! Mini-batch planning, batch loss/gradient and the SGD loop.

use log::debug;
use ndarray::Array1;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decoder::{accumulate_camera_grad, generate_with, memory_tokens};
use super::layers::Dropout;
use super::loss::{class_loss, hardest_negative_distances};
use super::{streams, substream, GcpConfig, GcpModel, ModelError, ModelParams};
use crate::store::{CameraId, ClassId, EmbeddingSet};

/// One class's share of a mini-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPlan {
    pub class_id: ClassId,
    /// Record indices of the sampled instances (with repeats when the class
    /// is smaller than `instances_per_class`).
    pub instances: Vec<usize>,
    /// The first `memory_len` instances form the decoder memory.
    pub memory_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub epoch: usize,
    pub index: usize,
    pub classes: Vec<ClassPlan>,
}

/// Shuffle classes into batches of `batch_classes` and sample instances and
/// memory lengths. Batches with fewer than two classes are dropped.
pub fn plan_epoch(set: &EmbeddingSet, cfg: &GcpConfig, epoch: usize) -> Vec<BatchPlan> {
    let mut rng = substream(cfg.seed, streams::SAMPLING, epoch as u64);
    let mut classes: Vec<ClassId> = set.class_ids().collect();
    classes.shuffle(&mut rng);
    let k = cfg.instances_per_class;
    classes
        .chunks(cfg.batch_classes)
        .filter(|chunk| chunk.len() >= 2)
        .enumerate()
        .map(|(index, chunk)| BatchPlan {
            epoch,
            index,
            classes: chunk
                .iter()
                .map(|&c| {
                    let pool = set.class_indices(c).expect("listed class");
                    let instances: Vec<usize> = if pool.len() >= k {
                        index::sample(&mut rng, pool.len(), k)
                            .into_iter()
                            .map(|i| pool[i])
                            .collect()
                    } else {
                        (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
                    };
                    let lo = k.min(2);
                    ClassPlan {
                        class_id: c,
                        instances,
                        memory_len: rng.random_range(lo..=k),
                    }
                })
                .collect(),
        })
        .collect()
}

/// Loss of one batch and what it was made of.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub triplet: f64,
    pub spacing: f64,
    pub n_triplets: usize,
    pub triplets_active: usize,
    /// See [`super::loss::ClassLoss::min_kink_gap`].
    pub min_kink_gap: f64,
}

/// Generated prototypes of every class in the batch, in plan order.
pub fn batch_prototypes(
    params: &ModelParams,
    cfg: &GcpConfig,
    set: &EmbeddingSet,
    plan: &BatchPlan,
) -> Result<Vec<Vec<Array1<f64>>>, ModelError> {
    plan.classes
        .iter()
        .map(|cp| {
            let (vectors, cameras) = memory_rows(set, cp);
            let tokens = memory_tokens(params, &vectors, &cameras)?;
            Ok(
                generate_with::<rand_chacha::ChaCha8Rng>(params, cfg.n_heads, &tokens, cfg.n_prototypes, None)
                    .prototypes,
            )
        })
        .collect()
}

fn memory_rows<'a>(set: &'a EmbeddingSet, cp: &ClassPlan) -> (Vec<&'a [f64]>, Vec<CameraId>) {
    cp.instances[..cp.memory_len]
        .iter()
        .map(|&i| {
            let r = set.record(i);
            (r.vector.as_slice(), r.camera_id)
        })
        .unzip()
}

/// Loss of one batch and, with `with_grad`, its gradient.
///
/// Triplets pair every generated prototype of a class (positive) with every
/// batch instance of that class (anchor) and the anchor's nearest instance of
/// another class (negative). The loss is the mean triplet term plus `lambda`
/// times the per-class mean spacing term. With `dropout`, masks come from a
/// stream keyed by `(epoch, batch, slot)`.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    cfg: &GcpConfig,
    set: &EmbeddingSet,
    plan: &BatchPlan,
    dropout: bool,
    with_grad: bool,
) -> Result<(BatchLoss, Option<ModelParams>), ModelError> {
    let vectors =
        |cp: &ClassPlan| -> Vec<&[f64]> { cp.instances.iter().map(|&i| set.record(i).vector.as_slice()).collect() };
    let n_classes = plan.classes.len();
    let total_triplets: usize = plan
        .classes
        .iter()
        .map(|cp| cp.instances.len() * cfg.n_prototypes)
        .sum();
    if n_classes < 2 || total_triplets == 0 {
        return Err(ModelError::NotEnoughData(format!(
            "batch {} of epoch {} has {} classes",
            plan.index, plan.epoch, n_classes
        )));
    }
    let trip_scale = 1.0 / total_triplets as f64;
    let spacing_scale = cfg.lambda / n_classes as f64;

    let per_class = plan
        .classes
        .par_iter()
        .enumerate()
        .map(|(slot, cp)| {
            let anchors = vectors(cp);
            let others: Vec<&[f64]> = plan
                .classes
                .iter()
                .filter(|o| o.class_id != cp.class_id)
                .flat_map(&vectors)
                .collect();
            let neg = hardest_negative_distances(&anchors, &others);
            let (mem_vectors, cameras) = memory_rows(set, cp);
            let tokens = memory_tokens(params, &mem_vectors, &cameras)?;
            let drop = (dropout && cfg.dropout_rate > 0.0).then(|| Dropout {
                rate: cfg.dropout_rate,
                rng: substream(
                    cfg.seed,
                    streams::DROPOUT,
                    ((plan.epoch as u64) << 28) | ((plan.index as u64) << 12) | slot as u64,
                ),
            });
            let gen = generate_with(params, cfg.n_heads, &tokens, cfg.n_prototypes, drop);
            let cl = class_loss(&gen.prototypes, &anchors, &neg, cfg.margin);
            let grad = with_grad.then(|| {
                let dp: Vec<Array1<f64>> = cl
                    .triplet_grad
                    .iter()
                    .zip(&cl.spacing_grad)
                    .map(|(t, s)| t * trip_scale + s * spacing_scale)
                    .collect();
                let mut g = ModelParams::zeros(cfg);
                let dmem = gen.backward(params, dp, &mut g);
                accumulate_camera_grad(&dmem, &cameras, &mut g);
                g
            });
            Ok((cl, grad))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let mut triplet = 0.0;
    let mut spacing = 0.0;
    let mut n_triplets = 0;
    let mut triplets_active = 0;
    let mut min_kink_gap = f64::INFINITY;
    let mut grad = with_grad.then(|| ModelParams::zeros(cfg));
    for (cl, g) in per_class {
        triplet += cl.triplet_sum;
        spacing += cl.spacing;
        n_triplets += cl.n_triplets;
        triplets_active += cl.triplets_active;
        min_kink_gap = min_kink_gap.min(cl.min_kink_gap);
        if let (Some(total), Some(g)) = (grad.as_mut(), g) {
            total.add_assign(&g);
        }
    }
    let triplet = triplet * trip_scale;
    let spacing = spacing / n_classes as f64;
    Ok((
        BatchLoss {
            loss: triplet + cfg.lambda * spacing,
            triplet,
            spacing,
            n_triplets,
            triplets_active,
            min_kink_gap,
        },
        grad,
    ))
}

/// SGD with momentum and weight decay:
/// `g += wd·θ; v = μ·v + g; θ -= lr·v`.
pub fn sgd_step(params: &mut ModelParams, grad: &ModelParams, velocity: &mut ModelParams, cfg: &GcpConfig) {
    let mut theta = params.to_flat();
    let g = grad.to_flat();
    let mut v = velocity.to_flat();
    for ((t, gi), vi) in theta.iter_mut().zip(&g).zip(v.iter_mut()) {
        let gi = gi + cfg.weight_decay * *t;
        *vi = cfg.momentum * *vi + gi;
        *t -= cfg.lr * *vi;
    }
    params.assign_flat(&theta);
    velocity.assign_flat(&v);
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Mean batch loss of each epoch (dropout active).
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Train a fresh model on `set`.
pub fn train(set: &EmbeddingSet, cfg: &GcpConfig) -> Result<(GcpModel, TrainingTrace), ModelError> {
    let mut model = GcpModel::new(cfg.clone())?;
    if set.dim() != cfg.dim {
        return Err(ModelError::DimensionMismatch {
            expected: cfg.dim,
            found: set.dim(),
        });
    }
    if set.n_cameras() > cfg.n_cameras {
        return Err(ModelError::InvalidConfig(format!(
            "training set has {} cameras but the model only {}",
            set.n_cameras(),
            cfg.n_cameras
        )));
    }
    if set.n_classes() < 2 {
        return Err(ModelError::NotEnoughData("training needs at least two classes".into()));
    }
    let mut velocity = ModelParams::zeros(cfg);
    let mut trace = TrainingTrace::default();
    for epoch in 0..cfg.epochs {
        let plans = plan_epoch(set, cfg, epoch);
        let mut sum = 0.0;
        for plan in &plans {
            let (bl, grad) = batch_loss_and_grad(&model.params, cfg, set, plan, true, true)?;
            if !bl.loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: plan.index,
                });
            }
            let grad = grad.expect("requested");
            if log::log_enabled!(log::Level::Trace) {
                let norm = grad.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt();
                log::trace!(
                    "epoch {epoch} batch {}: loss {:.6}, grad norm {norm:.3e}",
                    plan.index,
                    bl.loss
                );
            }
            sgd_step(&mut model.params, &grad, &mut velocity, cfg);
            if !model.params.all_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: plan.index,
                });
            }
            sum += bl.loss;
            trace.steps += 1;
        }
        let mean = sum / plans.len().max(1) as f64;
        debug!("epoch {epoch}: mean loss {mean:.6} over {} batches", plans.len());
        trace.epoch_loss.push(mean);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EmbeddingRecord;

    fn two_blobs() -> EmbeddingSet {
        let mut records = Vec::new();
        for c in 0..4u32 {
            for i in 0..6 {
                let mut v = vec![0.0; 4];
                v[c as usize % 4] = 3.0;
                v[(c as usize + 1) % 4] = 0.1 * i as f64;
                records.push(EmbeddingRecord {
                    id: format!("{c}-{i}"),
                    vector: v,
                    class_id: ClassId(c),
                    camera_id: CameraId(i % 2),
                });
            }
        }
        EmbeddingSet::from_records(records).unwrap()
    }

    fn cfg() -> GcpConfig {
        GcpConfig {
            dim: 4,
            n_blocks: 1,
            n_heads: 2,
            ffn_dim: 8,
            n_cameras: 2,
            batch_classes: 3,
            instances_per_class: 4,
            epochs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn plans_drop_singleton_batches() {
        let plans = plan_epoch(&two_blobs(), &cfg(), 0);
        assert_eq!(plans.len(), 1);
        let cp = &plans[0].classes[0];
        assert_eq!(cp.instances.len(), 4);
        assert!((2..=4).contains(&cp.memory_len));
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let c = GcpConfig { lr: 0.0, ..cfg() };
        let (model, trace) = train(&two_blobs(), &c).unwrap();
        assert_eq!(model.params, GcpModel::new(c).unwrap().params);
        assert_eq!(trace.epoch_loss.len(), 3);
    }

    #[test]
    fn training_is_deterministic_without_dropout() {
        let c = GcpConfig {
            dropout_rate: 0.0,
            ..cfg()
        };
        let a = train(&two_blobs(), &c).unwrap();
        let b = train(&two_blobs(), &c).unwrap();
        assert_eq!(a.0.params, b.0.params);
        assert_eq!(a.1, b.1);
    }
}
