//! Farthest-point sampling and its α-interpolated variant.

use crate::vector::{argmax, mean, squared_euclidean};

/// Greedy maximin ordering.
///
/// `reference` are fixed points the selection must stay away from (they are
/// not returned), `preselected` are point indices taken as already chosen.
/// Returns `preselected` followed by new picks until `count` indices are
/// selected or points run out. Each new pick maximizes the minimum distance to
/// the reference points and everything selected so far; ties resolve to the
/// lowest point index.
pub fn maximin_order(points: &[&[f64]], reference: &[&[f64]], preselected: &[usize], count: usize) -> Vec<usize> {
    let n = points.len();
    let mut min_dist = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(count.min(n));
    let absorb = |anchor: &[f64], min_dist: &mut [f64]| {
        for (d, p) in min_dist.iter_mut().zip(points) {
            let s = squared_euclidean(p, anchor);
            if s < *d {
                *d = s;
            }
        }
    };
    for r in reference {
        absorb(r, &mut min_dist);
    }
    for &i in preselected.iter().take(count) {
        taken[i] = true;
        order.push(i);
        absorb(points[i], &mut min_dist);
    }
    while order.len() < count.min(n) {
        let pick = argmax(
            min_dist
                .iter()
                .zip(&taken)
                .map(|(&d, &t)| if t { f64::NEG_INFINITY } else { d }),
        )
        .map(|(i, _)| i)
        .expect("non-empty while picks remain");
        taken[pick] = true;
        order.push(pick);
        absorb(points[pick], &mut min_dist);
    }
    order
}

/// Standard FPS started at the point nearest the class centroid.
/// Returns indices into `points`, `min(count, points.len())` of them.
pub fn fps_from_centroid(points: &[&[f64]], count: usize) -> Vec<usize> {
    if points.is_empty() || count == 0 {
        return Vec::new();
    }
    let centroid = mean(points.iter().copied(), points[0].len());
    let start = crate::vector::argmin(points.iter().map(|p| squared_euclidean(p, &centroid)))
        .map(|(i, _)| i)
        .expect("non-empty");
    maximin_order(points, &[], &[start], count)
}

/// One iteration of α-FPS: which raw point was taken, which prototype it was
/// pulled toward, and the resulting prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaStep {
    pub point: usize,
    pub nearest_prototype: usize,
    pub prototype: Vec<f64>,
}

/// α-FPS trace for one class. `prototypes[0]` is the centroid; `steps[t]`
/// produced `prototypes[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFps {
    pub prototypes: Vec<Vec<f64>>,
    pub steps: Vec<AlphaStep>,
}

/// α-farthest point sampling.
///
/// Starts from the centroid, then `n` times: take the remaining point farthest
/// from the current prototypes, find its nearest prototype `p`, remove the
/// point and add `x + α(p - x)` as a new prototype. Returns up to `n + 1`
/// prototypes; classes with fewer than two points yield the centroid alone.
pub fn alpha_fps(points: &[&[f64]], n: usize, alpha: f64) -> AlphaFps {
    assert!(!points.is_empty(), "alpha_fps on an empty class");
    let dim = points[0].len();
    let centroid = mean(points.iter().copied(), dim);
    let mut out = AlphaFps {
        prototypes: vec![centroid],
        steps: Vec::new(),
    };
    if points.len() < 2 {
        return out;
    }
    // Squared distance from each point to its nearest prototype, and which one.
    let mut nearest: Vec<(f64, usize)> = points
        .iter()
        .map(|p| (squared_euclidean(p, &out.prototypes[0]), 0))
        .collect();
    let mut remaining = vec![true; points.len()];
    for _ in 0..n {
        let Some((x, _)) = argmax(
            nearest
                .iter()
                .zip(&remaining)
                .map(|(&(d, _), &r)| if r { d } else { f64::NEG_INFINITY }),
        )
        .filter(|&(i, _)| remaining[i]) else {
            break;
        };
        let p = nearest[x].1;
        remaining[x] = false;
        // (1-α)x + αp: reproduces x exactly at α=0 and p exactly at α=1.
        let proto: Vec<f64> = points[x]
            .iter()
            .zip(&out.prototypes[p])
            .map(|(xi, pi)| (1.0 - alpha) * xi + alpha * pi)
            .collect();
        let new_index = out.prototypes.len();
        for (i, pt) in points.iter().enumerate() {
            if remaining[i] {
                let d = squared_euclidean(pt, &proto);
                if d < nearest[i].0 {
                    nearest[i] = (d, new_index);
                }
            }
        }
        out.steps.push(AlphaStep {
            point: x,
            nearest_prototype: p,
            prototype: proto.clone(),
        });
        out.prototypes.push(proto);
    }
    out
}
