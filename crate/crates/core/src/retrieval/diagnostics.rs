//! Selector-quality diagnostics that look at the gallery itself.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prototypes::PrototypeSet;
use crate::store::{ClassId, EmbeddingSet};
use crate::vector::{euclidean, mean};

/// Gallery records for which no own-class prototype is strictly nearer than
/// every other-class prototype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub violations: usize,
    pub violating_ids: Vec<String>,
}

/// Count gallery records that break the coverage condition: some own-class
/// prototype must be strictly closer than any prototype of another class.
/// Exact ties count as violations.
pub fn coverage_violations(set: &EmbeddingSet, prototypes: &PrototypeSet) -> Coverage {
    let mut violating_ids = Vec::new();
    for r in set.records() {
        let mut own = f64::INFINITY;
        let mut other = f64::INFINITY;
        for (class, protos) in &prototypes.per_class {
            let best = protos
                .iter()
                .map(|p| euclidean(p, &r.vector))
                .fold(f64::INFINITY, f64::min);
            if *class == r.class_id {
                own = own.min(best);
            } else {
                other = other.min(best);
            }
        }
        // NaN distances count as violations.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(own < other) && !(own.is_finite() && other.is_infinite()) {
            violating_ids.push(r.id.clone());
        }
    }
    Coverage {
        violations: violating_ids.len(),
        violating_ids,
    }
}

/// Distance of every prototype to its class centroid. Classes missing from
/// `set` are skipped.
pub fn prototype_displacement(prototypes: &PrototypeSet, set: &EmbeddingSet) -> BTreeMap<ClassId, Vec<f64>> {
    prototypes
        .per_class
        .iter()
        .filter_map(|(class, protos)| {
            let vectors = set.class_vectors(*class).ok()?;
            let centroid = mean(vectors, set.dim());
            Some((*class, protos.iter().map(|p| euclidean(p, &centroid)).collect()))
        })
        .collect()
}
