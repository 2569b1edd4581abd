//! Triplet loss with prototypes as positives plus the prototype-spacing hinge.

use ndarray::{Array1, ArrayView1};

use crate::vector::euclidean;

/// `max(0, margin + d_ap - d_an)`.
pub fn triplet_term(margin: f64, d_ap: f64, d_an: f64) -> f64 {
    (margin + d_ap - d_an).max(0.0)
}

/// Mean over ordered pairs `k != k'` of `max(0, margin - |p_k - p_k'|)`;
/// 0 for fewer than two prototypes.
pub fn spacing_term(prototypes: &[Array1<f64>], margin: f64) -> f64 {
    let n = prototypes.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += (margin - dist(prototypes[i].view(), prototypes[j].view())).max(0.0);
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    euclidean(a.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"))
}

/// Distance from each anchor to its hardest negative: the nearest vector in
/// `others`.
pub fn hardest_negative_distances(anchors: &[&[f64]], others: &[&[f64]]) -> Vec<f64> {
    anchors
        .iter()
        .map(|a| others.iter().map(|n| euclidean(a, n)).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Per-class loss pieces and their gradients w.r.t. the class prototypes.
#[derive(Debug, Clone)]
pub struct ClassLoss {
    /// Sum of triplet terms over `prototypes × anchors`.
    pub triplet_sum: f64,
    pub n_triplets: usize,
    pub triplets_active: usize,
    pub spacing: f64,
    /// Smallest distance of any hinge argument (or prototype-anchor distance)
    /// from its kink at zero. Finite-difference checks avoid small values.
    pub min_kink_gap: f64,
    /// `d triplet_sum / d p_k`.
    pub triplet_grad: Vec<Array1<f64>>,
    /// `d spacing / d p_k`.
    pub spacing_grad: Vec<Array1<f64>>,
}

/// Evaluate both loss terms for one class. `neg_dist[i]` is the hardest
/// negative distance of `anchors[i]`. At zero distance the norm's
/// subgradient is taken as 0.
pub fn class_loss(prototypes: &[Array1<f64>], anchors: &[&[f64]], neg_dist: &[f64], margin: f64) -> ClassLoss {
    let n = prototypes.len();
    let d = prototypes.first().map_or(0, |p| p.len());
    let mut triplet_sum = 0.0;
    let mut triplets_active = 0;
    let mut triplet_grad = vec![Array1::zeros(d); n];
    let mut min_kink_gap = f64::INFINITY;
    for (k, p) in prototypes.iter().enumerate() {
        let ps = p.as_slice().expect("contiguous");
        for (a, &dn) in anchors.iter().zip(neg_dist) {
            let dap = euclidean(ps, a);
            let term = triplet_term(margin, dap, dn);
            min_kink_gap = min_kink_gap.min((margin + dap - dn).abs()).min(dap);
            if term > 0.0 {
                triplet_sum += term;
                triplets_active += 1;
                if dap > 0.0 {
                    for ((g, &pv), &av) in triplet_grad[k].iter_mut().zip(ps).zip(a.iter()) {
                        *g += (pv - av) / dap;
                    }
                }
            }
        }
    }

    let mut spacing_grad = vec![Array1::zeros(d); n];
    if n >= 2 {
        let pairs = (n * (n - 1)) as f64;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dij = dist(prototypes[i].view(), prototypes[j].view());
                min_kink_gap = min_kink_gap.min((margin - dij).abs()).min(dij);
                if margin - dij > 0.0 && dij > 0.0 {
                    // the pair (i, j) moves both ends; (j, i) is visited separately
                    let dir = (&prototypes[i] - &prototypes[j]) / (dij * pairs);
                    spacing_grad[i] -= &dir;
                    spacing_grad[j] += &dir;
                }
            }
        }
    }
    ClassLoss {
        triplet_sum,
        n_triplets: n * anchors.len(),
        triplets_active,
        spacing: spacing_term(prototypes, margin),
        min_kink_gap,
        triplet_grad,
        spacing_grad,
    }
}
