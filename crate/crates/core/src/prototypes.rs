//! Per-class prototype vectors produced by a selector.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::store::ClassId;

/// Which selector produced a [`PrototypeSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorTag {
    Instance,
    Centroid,
    Kcentroid,
    Fps,
    AlphaFps,
    Gcp,
}

impl SelectorTag {
    pub const ALL: [SelectorTag; 6] = [
        SelectorTag::Instance,
        SelectorTag::Centroid,
        SelectorTag::Kcentroid,
        SelectorTag::Fps,
        SelectorTag::AlphaFps,
        SelectorTag::Gcp,
    ];

    /// Name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            SelectorTag::Instance => "instance",
            SelectorTag::Centroid => "centroid",
            SelectorTag::Kcentroid => "kcentroid",
            SelectorTag::Fps => "fps",
            SelectorTag::AlphaFps => "alphafps",
            SelectorTag::Gcp => "gcp",
        }
    }
}

impl fmt::Display for SelectorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "instance" => Ok(SelectorTag::Instance),
            "centroid" => Ok(SelectorTag::Centroid),
            "kcentroid" => Ok(SelectorTag::Kcentroid),
            "fps" => Ok(SelectorTag::Fps),
            "alphafps" => Ok(SelectorTag::AlphaFps),
            "gcp" => Ok(SelectorTag::Gcp),
            _ => Err(format!("unknown selector `{s}`")),
        }
    }
}

/// Ordered prototype vectors per class. List position is the generation
/// iteration (meaningful for α-FPS and GCP).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub selector: SelectorTag,
    pub dim: usize,
    pub per_class: BTreeMap<ClassId, Vec<Vec<f64>>>,
    /// Selector parameters and diagnostics echoed into reports.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl PrototypeSet {
    pub fn new(selector: SelectorTag, dim: usize) -> Self {
        PrototypeSet {
            selector,
            dim,
            per_class: BTreeMap::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn get(&self, class: ClassId) -> Option<&[Vec<f64>]> {
        self.per_class.get(&class).map(Vec::as_slice)
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    /// Total number of prototype vectors over all classes.
    pub fn total(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn counts(&self) -> BTreeMap<ClassId, usize> {
        self.per_class.iter().map(|(c, v)| (*c, v.len())).collect()
    }

    pub fn echo(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.params.insert(key.to_string(), value.into());
    }

    /// Every vector finite and of dimension `dim`.
    pub fn is_valid(&self) -> bool {
        self.per_class
            .values()
            .flatten()
            .all(|p| p.len() == self.dim && p.iter().all(|v| v.is_finite()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prototype sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
