//! Lloyd's k-means with deterministic maximin seeding.

use rand::Rng;

use super::fps::maximin_order;
use crate::vector::{argmax, argmin, mean, squared_euclidean};

/// Outcome of one k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Within-cluster sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| argmin(centroids.iter().map(|c| squared_euclidean(p, c))).expect("k >= 1"))
        .unzip()
}

/// Cluster `points` into `k` groups. `k` is clamped to `points.len()`.
///
/// The first center is a random point drawn from `rng`; the rest are picked by
/// greedy maximin. Empty clusters are re-seeded with the point farthest from
/// its current centroid. Iteration stops when no centroid moves more than
/// `tol` or after `max_iters` updates; the latter is reported through
/// `converged = false`, not as an error.
pub fn kmeans<R: Rng>(points: &[&[f64]], k: usize, max_iters: usize, tol: f64, rng: &mut R) -> KMeans {
    assert!(!points.is_empty() && k > 0, "kmeans needs points and k >= 1");
    let dim = points[0].len();
    let k = k.min(points.len());
    let first = rng.random_range(0..points.len());
    let mut centroids: Vec<Vec<f64>> = maximin_order(points, &[], &[first], k)
        .into_iter()
        .map(|i| points[i].to_vec())
        .collect();

    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut assignments = Vec::new();
    while iterations < max_iters {
        iterations += 1;
        let (assigned, dists) = assign(points, &centroids);
        objective.push(dists.iter().sum());
        assignments = assigned;

        let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
        for (p, &a) in points.iter().zip(&assignments) {
            members[a].push(p);
        }
        let mut updated: Vec<Option<Vec<f64>>> = members
            .iter()
            .map(|m| (!m.is_empty()).then(|| mean(m.iter().copied(), dim)))
            .collect();
        if updated.iter().any(Option::is_none) {
            // cost of each point w.r.t. its (updated) centroid
            let mut cost: Vec<f64> = points
                .iter()
                .zip(&assignments)
                .map(|(p, &a)| updated[a].as_ref().map_or(0.0, |c| squared_euclidean(p, c)))
                .collect();
            for slot in updated.iter_mut().filter(|u| u.is_none()) {
                let (far, _) = argmax(cost.iter().copied()).expect("non-empty");
                *slot = Some(points[far].to_vec());
                cost[far] = f64::NEG_INFINITY;
            }
        }
        let updated: Vec<Vec<f64>> = updated.into_iter().map(|u| u.expect("filled")).collect();
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_euclidean(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        // final objective for the returned centroids
        let (assigned, dists) = assign(points, &centroids);
        objective.push(dists.iter().sum());
        assignments = assigned;
    }
    KMeans {
        centroids,
        assignments,
        iterations,
        converged,
        objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn separated_singletons_are_fixed_points() {
        let p = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
        let out = kmeans(&refs(&p), 2, 50, 1e-12, &mut ChaCha8Rng::seed_from_u64(1));
        let mut c = out.centroids.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, p);
        assert!(out.converged);
    }

    #[test]
    fn k_one_is_the_mean() {
        let p = vec![vec![1.0], vec![2.0], vec![6.0]];
        let out = kmeans(&refs(&p), 1, 10, 1e-12, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out.centroids, vec![vec![3.0]]);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let p: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin() * 5.0, i as f64 * 0.1]).collect();
        let out = kmeans(&refs(&p), 4, 1, 1e-15, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.iterations, 1);
        assert_eq!(out.centroids.len(), 4);
    }

    #[test]
    fn duplicate_points_keep_k_clusters() {
        let p = vec![vec![1.0]; 5];
        let out = kmeans(&refs(&p), 3, 20, 1e-12, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(out.centroids.len(), 3);
        assert!(out.centroids.iter().all(|c| c == &vec![1.0]));
    }
}
