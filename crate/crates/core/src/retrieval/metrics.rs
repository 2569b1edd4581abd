//! CMC, average precision and per-group breakdowns.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rank_with, QueryPrototypes, Ranking, RetrievalError};
use crate::store::{CameraId, ClassId, EmbeddingSet};

/// How relevance is counted for average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Every own-class prototype is a relevant item.
    #[default]
    PerPrototype,
    /// The ranking is collapsed to classes (first occurrence) and the query's
    /// class is the single relevant item.
    PerIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Largest `k` of the CMC curve.
    pub max_rank: usize,
    pub ap_mode: ApMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_rank: 25,
            ap_mode: ApMode::PerPrototype,
        }
    }
}

/// Per-query result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub class_id: ClassId,
    pub camera_id: CameraId,
    /// 0-based rank of the first own-class prototype.
    pub first_hit: Option<usize>,
    pub ap: f64,
}

/// Inclusive range of gallery class sizes; `max = None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub min: usize,
    pub max: Option<usize>,
}

impl Bucket {
    pub fn contains(&self, size: usize) -> bool {
        size >= self.min && self.max.is_none_or(|m| size <= m)
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.max {
            Some(m) if m == self.min => write!(f, "{}", self.min),
            Some(m) => write!(f, "{}-{}", self.min, m),
            None => write!(f, "{}+", self.min),
        }
    }
}

impl FromStr for Bucket {
    type Err = String;

    /// `"4-5"`, `"6"`, `"50+"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad bucket `{s}`: {e}"));
        let bucket = if let Some(lo) = s.strip_suffix('+') {
            Bucket {
                min: num(lo)?,
                max: None,
            }
        } else if let Some((lo, hi)) = s.split_once('-') {
            Bucket {
                min: num(lo)?,
                max: Some(num(hi)?),
            }
        } else {
            let v = num(s)?;
            Bucket { min: v, max: Some(v) }
        };
        if bucket.max.is_some_and(|m| m < bucket.min) {
            return Err(format!("bad bucket `{s}`: upper bound below lower bound"));
        }
        Ok(bucket)
    }
}

/// One row of a gallery-size breakdown. `map` is absent for empty buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub bucket: String,
    pub count: usize,
    pub map: Option<f64>,
}

/// Evaluation summary. Serializes to JSON with keys in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_queries: usize,
    pub max_rank: usize,
    pub ap_mode: ApMode,
    /// `cmc[k - 1]` = fraction of queries with an own-class prototype in the top `k`.
    pub cmc: Vec<f64>,
    pub top1: f64,
    pub map: f64,
    #[serde(default)]
    pub per_group: Vec<GroupRow>,
    /// Queries whose class had no prototype at all (AP counted as 0).
    #[serde(default)]
    pub flagged_queries: Vec<String>,
    #[serde(default)]
    pub per_query: Vec<QueryOutcome>,
    #[serde(default)]
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// One row per CMC rank followed by a summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,k,cmc,top1,map,n_queries\n");
        for (i, v) in self.cmc.iter().enumerate() {
            out.push_str(&format!("cmc,{},{v},,,\n", i + 1));
        }
        out.push_str(&format!("summary,,,{},{},{}\n", self.top1, self.map, self.n_queries));
        out
    }
}

/// Average precision of a relevance pattern in rank order:
/// mean over relevant positions `r_i` of `i / r_i`, 0 with no relevant item.
pub fn average_precision(relevant: impl IntoIterator<Item = bool>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, rel) in relevant.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Fraction of the first `k` ranked prototypes that belong to `class`.
pub fn precision_at_k(ranking: &Ranking, class: ClassId, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranking.entries.iter().take(k).filter(|e| e.class_id == class).count();
    hits as f64 / k as f64
}

fn query_ap(ranking: &Ranking, class: ClassId, mode: ApMode) -> f64 {
    match mode {
        ApMode::PerPrototype => average_precision(ranking.entries.iter().map(|e| e.class_id == class)),
        ApMode::PerIdentity => {
            let mut seen = Vec::new();
            for e in &ranking.entries {
                if !seen.contains(&e.class_id) {
                    seen.push(e.class_id);
                }
            }
            average_precision(seen.into_iter().map(|c| c == class))
        }
    }
}

/// Rank every query and summarize CMC and mAP.
///
/// Queries are processed in parallel; results are reduced in query order, so
/// the report is identical to a sequential run.
pub fn evaluate(
    queries: &EmbeddingSet,
    prototypes: &QueryPrototypes,
    opts: &EvalOptions,
) -> Result<EvalReport, RetrievalError> {
    if opts.max_rank == 0 {
        return Err(RetrievalError::InvalidOption("max_rank must be >= 1".into()));
    }
    let outcomes = queries
        .records()
        .par_iter()
        .map(|q| {
            let ranking = rank_with(q, prototypes)?;
            Ok(QueryOutcome {
                query_id: q.id.clone(),
                class_id: q.class_id,
                camera_id: q.camera_id,
                first_hit: ranking.first_position(q.class_id),
                ap: query_ap(&ranking, q.class_id, opts.ap_mode),
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    Ok(summarize(outcomes, opts))
}

fn summarize(outcomes: Vec<QueryOutcome>, opts: &EvalOptions) -> EvalReport {
    let n = outcomes.len();
    let mut hits_at = vec![0usize; opts.max_rank];
    let mut ap_sum = 0.0;
    let mut flagged = Vec::new();
    for o in &outcomes {
        match o.first_hit {
            Some(pos) => {
                for h in hits_at.iter_mut().skip(pos) {
                    *h += 1;
                }
            }
            None => flagged.push(o.query_id.clone()),
        }
        ap_sum += o.ap;
    }
    let denom = n.max(1) as f64;
    let cmc: Vec<f64> = hits_at.iter().map(|&h| h as f64 / denom).collect();
    EvalReport {
        n_queries: n,
        max_rank: opts.max_rank,
        ap_mode: opts.ap_mode,
        top1: cmc[0],
        cmc,
        map: ap_sum / denom,
        per_group: Vec::new(),
        flagged_queries: flagged,
        per_query: outcomes,
        config_echo: serde_json::Value::Null,
    }
}

/// mAP restricted to queries whose class's gallery size falls in each bucket.
pub fn group_breakdown(outcomes: &[QueryOutcome], gallery: &EmbeddingSet, buckets: &[Bucket]) -> Vec<GroupRow> {
    buckets
        .iter()
        .map(|b| {
            let aps: Vec<f64> = outcomes
                .iter()
                .filter(|o| b.contains(gallery.class_size(o.class_id)))
                .map(|o| o.ap)
                .collect();
            GroupRow {
                bucket: b.to_string(),
                count: aps.len(),
                map: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
            }
        })
        .collect()
}
