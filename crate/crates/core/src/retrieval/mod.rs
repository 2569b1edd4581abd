//! Prototype-based ranking and the evaluation stack.
//!
//! A query is ranked against every prototype of every class by Euclidean
//! distance. Under the camera-filter protocol the query's own class uses
//! prototypes regenerated without the query's camera; those come from the
//! caller through [`QueryPrototypes`] overrides, this module never
//! regenerates anything.

mod diagnostics;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::prototypes::PrototypeSet;
use crate::store::{CameraId, ClassId, EmbeddingRecord};
use crate::vector::euclidean;

pub use diagnostics::{coverage_violations, prototype_displacement, Coverage};
pub use metrics::{
    average_precision, evaluate, group_breakdown, precision_at_k, ApMode, Bucket, EvalOptions, EvalReport, GroupRow,
    QueryOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no prototypes to rank against")]
    EmptyPrototypes,
    #[error("invalid evaluation option: {0}")]
    InvalidOption(String),
}

/// Euclidean distance between two vectors of equal dimension.
pub fn distance(p: &[f64], q: &[f64]) -> Result<f64, RetrievalError> {
    if p.len() != q.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(euclidean(p, q))
}

/// How gallery prototypes relate to the query being ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// One prototype set for every query.
    #[default]
    Plain,
    /// The query class's prototypes are rebuilt without records from the
    /// query's camera; all other classes use every gallery record.
    CameraFilteredRegen,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Plain => "plain",
            Protocol::CameraFilteredRegen => "camera-filter",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "plain" => Ok(Protocol::Plain),
            "camera-filter" | "camera-filtered" | "camera-filtered-regen" => Ok(Protocol::CameraFilteredRegen),
            _ => Err(format!("unknown protocol `{s}` (expected plain or camera-filter)")),
        }
    }
}

/// Per-(class, camera) prototype replacements.
pub type CameraOverrides = BTreeMap<(ClassId, CameraId), Vec<Vec<f64>>>;

/// Prototypes as seen by each query: a shared base set plus, under the
/// camera-filter protocol, per-(class, camera) replacements for the query's
/// own class.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPrototypes {
    pub base: PrototypeSet,
    pub overrides: CameraOverrides,
    pub protocol: Protocol,
}

impl QueryPrototypes {
    pub fn shared(base: PrototypeSet) -> Self {
        QueryPrototypes {
            base,
            overrides: BTreeMap::new(),
            protocol: Protocol::Plain,
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    /// Prototypes of `class` as seen by `query`.
    pub fn class_prototypes(&self, class: ClassId, query: &EmbeddingRecord) -> Option<&[Vec<f64>]> {
        if class == query.class_id {
            if let Some(o) = self.overrides.get(&(class, query.camera_id)) {
                return Some(o);
            }
        }
        self.base.get(class)
    }

    /// Every class that has prototypes for some query.
    fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        let mut all: Vec<ClassId> = self
            .base
            .per_class
            .keys()
            .copied()
            .chain(self.overrides.keys().map(|(c, _)| *c))
            .collect();
        all.sort_unstable();
        all.dedup();
        all.into_iter()
    }
}

/// One ranked prototype.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub class_id: ClassId,
    pub prototype_index: usize,
    pub distance: f64,
}

/// All eligible prototypes for one query, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<RankEntry>,
    pub protocol: Protocol,
    /// Some pair of entries had exactly equal distance and was ordered by
    /// `(class_id, prototype_index)`.
    pub tie_rule_applied: bool,
}

impl Ranking {
    /// 0-based position of the first prototype of `class`.
    pub fn first_position(&self, class: ClassId) -> Option<usize> {
        self.entries.iter().position(|e| e.class_id == class)
    }
}

fn rank_entries<'a>(
    query: &EmbeddingRecord,
    classes: impl Iterator<Item = (ClassId, &'a [Vec<f64>])>,
    dim: usize,
    protocol: Protocol,
) -> Result<Ranking, RetrievalError> {
    if query.vector.len() != dim {
        return Err(RetrievalError::DimensionMismatch {
            expected: dim,
            found: query.vector.len(),
        });
    }
    let mut entries = Vec::new();
    for (class_id, protos) in classes {
        for (prototype_index, p) in protos.iter().enumerate() {
            if p.len() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            entries.push(RankEntry {
                class_id,
                prototype_index,
                distance: euclidean(p, &query.vector),
            });
        }
    }
    if entries.is_empty() {
        return Err(RetrievalError::EmptyPrototypes);
    }
    entries.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.class_id.cmp(&b.class_id))
            .then(a.prototype_index.cmp(&b.prototype_index))
    });
    let tie_rule_applied = entries.windows(2).any(|w| w[0].distance == w[1].distance);
    Ok(Ranking {
        query_id: query.id.clone(),
        entries,
        protocol,
        tie_rule_applied,
    })
}

/// Rank every prototype of `prototypes` for `query`.
///
/// Under [`Protocol::CameraFilteredRegen`] the caller is expected to pass a set
/// already regenerated for this query's camera.
pub fn rank_query(
    query: &EmbeddingRecord,
    prototypes: &PrototypeSet,
    protocol: Protocol,
) -> Result<Ranking, RetrievalError> {
    rank_entries(
        query,
        prototypes.per_class.iter().map(|(c, p)| (*c, p.as_slice())),
        prototypes.dim,
        protocol,
    )
}

/// Rank with per-query overrides applied.
pub fn rank_with(query: &EmbeddingRecord, prototypes: &QueryPrototypes) -> Result<Ranking, RetrievalError> {
    rank_entries(
        query,
        prototypes
            .classes()
            .filter_map(|c| prototypes.class_prototypes(c, query).map(|p| (c, p))),
        prototypes.dim(),
        prototypes.protocol,
    )
}
