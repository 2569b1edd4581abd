//! Experiment configuration (TOML).
//!
//! ```toml
//! version = 1
//! seed = 7
//! protocol = "plain"            # or "camera_filtered_regen"
//! buckets = ["1-15", "16-30", "31+"]
//!
//! [data]
//! preset = "tradeoff"           # or [data.synthetic], or gallery/queries/train paths
//!
//! [selector]
//! method = "gcp"
//! n_prototypes = 3
//!
//! [gcp]                         # needed for method = "gcp" unless gcp_checkpoint is set
//! epochs = 30
//!
//! [sweep]
//! axis = "n"                    # "none", "n" or "alpha"
//! values = [1, 2, 3, 6]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticSpec;
use super::BenchError;
use crate::model::GcpConfig;
use crate::prototypes::SelectorTag;
use crate::retrieval::{Bucket, EvalOptions, Protocol};
use crate::selectors::SelectorConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Where gallery and query embeddings come from. Exactly one of `preset`,
/// `synthetic` and `gallery` must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub preset: Option<String>,
    pub synthetic: Option<SyntheticSpec>,
    pub gallery: Option<PathBuf>,
    /// Defaults to the gallery itself when absent.
    pub queries: Option<PathBuf>,
    /// Training split for the learned selector (file data only).
    pub train: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    #[default]
    None,
    N {
        values: Vec<usize>,
    },
    Alpha {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Master seed; copied into the data, selector and model configs on
    /// resolution.
    pub seed: u64,
    pub protocol: Protocol,
    pub buckets: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub gcp_checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub selector: SelectorConfig,
    pub gcp: Option<GcpConfig>,
    pub eval: EvalOptions,
    pub sweep: Sweep,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 0,
            protocol: Protocol::Plain,
            buckets: Vec::new(),
            output_dir: None,
            gcp_checkpoint: None,
            data: DataConfig::default(),
            selector: SelectorConfig::default(),
            gcp: None,
            eval: EvalOptions::default(),
            sweep: Sweep::None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn parsed_buckets(&self) -> Result<Vec<Bucket>, BenchError> {
        self.buckets
            .iter()
            .map(|b| b.parse().map_err(BenchError::Config))
            .collect()
    }

    /// Validate and return a copy with seeds propagated and any preset
    /// expanded, which is what reports echo.
    pub fn resolved(&self) -> Result<Self, BenchError> {
        let cfg_err = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.version != CONFIG_VERSION {
            return Err(BenchError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let mut out = self.clone();
        let d = &self.data;
        let sources = [d.preset.is_some(), d.synthetic.is_some(), d.gallery.is_some()]
            .iter()
            .filter(|x| **x)
            .count();
        if sources != 1 {
            return cfg_err("data: set exactly one of preset, synthetic or gallery");
        }
        if d.gallery.is_none() && (d.queries.is_some() || d.train.is_some()) {
            return cfg_err("data: queries and train paths need a gallery path");
        }
        if let Some(name) = &d.preset {
            out.data.synthetic = Some(SyntheticSpec::preset(name)?);
            out.data.preset = None;
        }
        if let Some(spec) = out.data.synthetic.as_mut() {
            spec.seed = self.seed;
            spec.validate()?;
        }
        out.selector.seed = self.seed;
        out.selector.validate()?;
        if let Some(g) = out.gcp.as_mut() {
            g.seed = self.seed;
            g.n_prototypes = self.selector.n_prototypes;
        }
        if self.selector.method == SelectorTag::Gcp {
            match (&out.gcp, &self.gcp_checkpoint) {
                (None, None) => return cfg_err("selector gcp needs a [gcp] section or gcp_checkpoint"),
                (Some(_), None) if d.gallery.is_some() && d.train.is_none() => {
                    return cfg_err("training the gcp selector on file data needs data.train")
                }
                _ => {}
            }
        }
        match &self.sweep {
            Sweep::None => {}
            Sweep::N { values } => {
                if values.is_empty() || values.contains(&0) {
                    return cfg_err("sweep: n values must be a non-empty list of positive integers");
                }
            }
            Sweep::Alpha { values } => {
                if values.is_empty() || values.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return cfg_err("sweep: alpha values must be a non-empty list within [0, 1]");
                }
            }
        }
        if self.eval.max_rank == 0 {
            return cfg_err("eval.max_rank must be >= 1");
        }
        self.parsed_buckets()?;
        Ok(out)
    }
}
