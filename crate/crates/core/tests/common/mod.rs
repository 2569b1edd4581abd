//! Test-side oracles shared by the integration and acceptance targets.

#![allow(dead_code)]

use gcp_core::model::{batch_loss_and_grad, BatchPlan, GcpConfig, GcpModel, ModelParams};
use gcp_core::prototypes::{PrototypeSet, SelectorTag};
use gcp_core::store::{CameraId, ClassId, EmbeddingRecord, EmbeddingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random set with `sizes[c]` records in class `c`, coordinates in `[-scale, scale]`.
pub fn random_set(rng: &mut impl Rng, sizes: &[usize], dim: usize, n_cameras: u32, scale: f64) -> EmbeddingSet {
    let mut records = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            records.push(EmbeddingRecord {
                id: format!("r{}", records.len()),
                vector: (0..dim).map(|_| rng.random_range(-scale..scale)).collect(),
                class_id: ClassId(c as u32),
                camera_id: CameraId(rng.random_range(0..n_cameras)),
            });
        }
    }
    EmbeddingSet::from_records(records).unwrap()
}

/// Integer-grid set with `sizes[c]` records in class `c`; small integer
/// coordinates make exact distance ties common.
pub fn grid_set(rng: &mut impl Rng, sizes: &[usize], dim: usize) -> EmbeddingSet {
    let mut records = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            records.push(EmbeddingRecord {
                id: format!("r{}", records.len()),
                vector: (0..dim).map(|_| rng.random_range(-3i32..=3) as f64).collect(),
                class_id: ClassId(c as u32),
                camera_id: CameraId(rng.random_range(0..2)),
            });
        }
    }
    EmbeddingSet::from_records(records).unwrap()
}

/// Between 1 and `max_protos` integer-grid prototypes for each of `n_classes` classes.
pub fn random_grid_prototypes(rng: &mut impl Rng, n_classes: usize, max_protos: usize, dim: usize) -> PrototypeSet {
    let mut set = PrototypeSet::new(SelectorTag::Kcentroid, dim);
    for c in 0..n_classes {
        let protos = (0..rng.random_range(1..=max_protos))
            .map(|_| (0..dim).map(|_| rng.random_range(-3i32..=3) as f64).collect())
            .collect();
        set.per_class.insert(ClassId(c as u32), protos);
    }
    set
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub struct OracleReport {
    pub cmc: Vec<f64>,
    pub map: f64,
}

/// CMC and mAP written from the definitions, sharing no code with the
/// library: full ranking sorted by (distance, class, index), AP as the mean
/// of `i / r_i` over relevant ranks.
pub fn brute_force_eval(queries: &EmbeddingSet, protos: &PrototypeSet, k_max: usize) -> OracleReport {
    let mut hits = vec![0usize; k_max];
    let mut ap_total = 0.0;
    for q in queries.records() {
        let mut all: Vec<(f64, u32, usize)> = Vec::new();
        for (c, ps) in &protos.per_class {
            for (i, p) in ps.iter().enumerate() {
                all.push((dist(p, &q.vector), c.0, i));
            }
        }
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let relevant: Vec<usize> = all
            .iter()
            .enumerate()
            .filter(|(_, e)| e.1 == q.class_id.0)
            .map(|(r, _)| r + 1)
            .collect();
        if let Some(&first) = relevant.first() {
            for (k, h) in hits.iter_mut().enumerate() {
                if first <= k + 1 {
                    *h += 1;
                }
            }
            let mut ap = 0.0;
            for (i, r) in relevant.iter().enumerate() {
                ap += (i + 1) as f64 / *r as f64;
            }
            ap_total += ap / relevant.len() as f64;
        }
    }
    let n = queries.len() as f64;
    OracleReport {
        cmc: hits.iter().map(|&h| h as f64 / n).collect(),
        map: ap_total / n,
    }
}

/// Gallery records ordered by distance to `q`, ties by (class, position
/// within the class), as (class, position) pairs.
pub fn brute_force_nn(gallery: &EmbeddingSet, q: &EmbeddingRecord) -> Vec<(ClassId, usize)> {
    let mut nn: Vec<(f64, ClassId, usize)> = Vec::new();
    for c in gallery.class_ids() {
        for (pos, &i) in gallery.class_indices(c).unwrap().iter().enumerate() {
            nn.push((dist(&gallery.record(i).vector, &q.vector), c, pos));
        }
    }
    nn.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    nn.into_iter().map(|e| (e.1, e.2)).collect()
}

/// A model with every parameter moved by up to `amp` from its initial value,
/// so no gradient path sits at a special point.
pub fn jittered(cfg: GcpConfig, seed: u64, amp: f64) -> GcpModel {
    let mut m = GcpModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = m.params.to_flat();
    for v in &mut flat {
        *v += rng.random_range(-amp..amp);
    }
    m.params.assign_flat(&flat);
    m
}

/// Gradient comparison for one named tensor.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub coords: usize,
    pub rel_err: f64,
}

/// Compare analytic gradients with central differences, tensor by tensor.
///
/// For each tensor, `‖g_analytic - g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)` over
/// the checked coordinates. Groups whose norms are both below 1e-8 are
/// structurally zero (the attention key bias, for one: softmax ignores a
/// per-row shift) and count as exact, since only rounding noise is left.
/// `sample` limits the number of coordinates per tensor (None = all).
pub fn finite_difference_check(
    model: &GcpModel,
    set: &EmbeddingSet,
    plan: &BatchPlan,
    dropout: bool,
    eps: f64,
    sample: Option<(usize, u64)>,
) -> Vec<GroupCheck> {
    let cfg: &GcpConfig = &model.config;
    let (_, grad) = batch_loss_and_grad(&model.params, cfg, set, plan, dropout, true).unwrap();
    let analytic = grad.unwrap().to_flat();
    let base = model.params.to_flat();
    let loss_at = |flat: &[f64]| {
        let mut p = ModelParams::zeros(cfg);
        p.assign_flat(flat);
        batch_loss_and_grad(&p, cfg, set, plan, dropout, false).unwrap().0.loss
    };

    let mut groups = Vec::new();
    let mut offset = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(sample.map_or(0, |s| s.1));
    for (name, shape) in model.params.manifest() {
        let len: usize = shape.iter().product();
        let coords: Vec<usize> = match sample {
            Some((k, _)) if k < len => (0..k).map(|_| rng.random_range(0..len)).collect(),
            _ => (0..len).collect(),
        };
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for &i in &coords {
            let mut plus = base.clone();
            plus[offset + i] += eps;
            let mut minus = base.clone();
            minus[offset + i] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let a = analytic[offset + i];
            diff += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
        }
        let scale = na.sqrt().max(nf.sqrt());
        let rel_err = if scale < 1e-8 { 0.0 } else { diff.sqrt() / scale };
        groups.push(GroupCheck {
            name,
            coords: coords.len(),
            rel_err,
        });
        offset += len;
    }
    groups
}
