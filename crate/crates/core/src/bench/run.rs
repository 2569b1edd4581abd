//! select → rank → evaluate pipelines, sweeps and artifact files.

use std::collections::BTreeSet;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::synthetic::generate_synthetic;
use super::BenchError;
use crate::model::{self, load_checkpoint, save_checkpoint, select_gcp, GcpModel, TrainingTrace};
use crate::prototypes::SelectorTag;
use crate::retrieval::{evaluate, group_breakdown, CameraOverrides, EvalReport, GroupRow, Protocol, QueryPrototypes};
use crate::selectors::{select, select_points, SelectorConfig};
use crate::store::{load_embedding_set, load_embedding_set_aligned, CameraId, ClassId, EmbeddingSet, Format};

/// Gallery, queries and (optionally) a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub gallery: EmbeddingSet,
    pub queries: EmbeddingSet,
    pub train: Option<EmbeddingSet>,
}

/// Load or generate the data a resolved config points at.
pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData, BenchError> {
    if let Some(spec) = &cfg.data.synthetic {
        let data = generate_synthetic(spec)?;
        return Ok(ExperimentData {
            gallery: data.gallery,
            queries: data.queries,
            train: Some(data.train),
        });
    }
    let gallery_path = cfg
        .data
        .gallery
        .as_ref()
        .ok_or_else(|| BenchError::Config("no data source (resolve the config first)".into()))?;
    let gallery = load_embedding_set(gallery_path, Format::from_path(gallery_path))?;
    let queries = match &cfg.data.queries {
        Some(p) => load_embedding_set_aligned(p, Format::from_path(p), &gallery)?,
        None => gallery.clone(),
    };
    let train = cfg
        .data
        .train
        .as_ref()
        .map(|p| load_embedding_set_aligned(p, Format::from_path(p), &gallery))
        .transpose()?;
    Ok(ExperimentData {
        gallery,
        queries,
        train,
    })
}

/// Load the configured checkpoint or train a model; `None` for non-learned
/// selectors. Training adopts the data's dimension and camera count.
pub fn obtain_model(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<Option<(GcpModel, Option<TrainingTrace>)>, BenchError> {
    if cfg.selector.method != SelectorTag::Gcp {
        return Ok(None);
    }
    if let Some(path) = &cfg.gcp_checkpoint {
        let model = load_checkpoint(path)?;
        if model.config.dim != data.gallery.dim() {
            return Err(model::ModelError::DimensionMismatch {
                expected: model.config.dim,
                found: data.gallery.dim(),
            }
            .into());
        }
        return Ok(Some((model, None)));
    }
    let mut gcp = cfg
        .gcp
        .clone()
        .ok_or_else(|| BenchError::Config("selector gcp needs a [gcp] section".into()))?;
    let train = data
        .train
        .as_ref()
        .ok_or_else(|| BenchError::Config("selector gcp needs training data".into()))?;
    gcp.dim = data.gallery.dim();
    gcp.n_cameras = gcp
        .n_cameras
        .max(data.gallery.n_cameras())
        .max(train.n_cameras())
        .max(data.queries.n_cameras());
    info!(
        "training gcp model: {} classes, {} epochs",
        train.n_classes(),
        gcp.epochs
    );
    let (model, trace) = model::train(train, &gcp)?;
    Ok(Some((model, Some(trace))))
}

fn regenerate(
    gallery: &EmbeddingSet,
    selector: &SelectorConfig,
    model: Option<&GcpModel>,
    class: ClassId,
    camera: CameraId,
) -> Result<(Vec<Vec<f64>>, bool), BenchError> {
    if let Some(m) = model {
        return Ok(m.class_prototypes(gallery, class, selector.n_prototypes, Some(camera))?);
    }
    let mut records = gallery.camera_filtered_view(class, camera)?;
    let fallback = records.is_empty();
    if fallback {
        records = gallery.class_view(class)?;
    }
    let points: Vec<&[f64]> = records.iter().map(|r| r.vector.as_slice()).collect();
    Ok((select_points(&points, selector, class)?.prototypes, fallback))
}

/// Prototypes as each query will see them.
///
/// Under the camera-filter protocol every distinct `(class, camera)` among
/// the queries gets its class prototypes rebuilt once from the gallery minus
/// that camera; queries sharing the pair share the result.
pub fn build_prototypes(
    protocol: Protocol,
    selector: &SelectorConfig,
    model: Option<&GcpModel>,
    gallery: &EmbeddingSet,
    queries: &EmbeddingSet,
) -> Result<QueryPrototypes, BenchError> {
    let mut base = match model {
        Some(m) => select_gcp(gallery, m, selector.n_prototypes, None)?,
        None => select(gallery, selector)?,
    };
    let mut qp = QueryPrototypes::shared(base.clone());
    if protocol == Protocol::CameraFilteredRegen {
        let groups: BTreeSet<(ClassId, CameraId)> = queries
            .records()
            .iter()
            .filter(|q| gallery.contains_class(q.class_id))
            .map(|q| (q.class_id, q.camera_id))
            .collect();
        let groups: Vec<(ClassId, CameraId)> = groups.into_iter().collect();
        let rebuilt = groups
            .par_iter()
            .map(|&(c, cam)| regenerate(gallery, selector, model, c, cam).map(|r| ((c, cam), r)))
            .collect::<Result<Vec<_>, BenchError>>()?;
        let mut fallback = Vec::new();
        for ((c, cam), (protos, fell_back)) in rebuilt {
            if fell_back {
                fallback.push(serde_json::json!([c.0, cam.0]));
            }
            qp.overrides.insert((c, cam), protos);
        }
        base.echo("camera_filter_groups", groups.len());
        base.echo("camera_filter_fallback", fallback);
        qp.base = base;
        qp.protocol = protocol;
    }
    Ok(qp)
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub report: EvalReport,
    pub prototypes: QueryPrototypes,
    pub model: Option<GcpModel>,
    pub trace: Option<TrainingTrace>,
}

/// Run one experiment on already loaded data. `cfg` must be resolved.
pub fn run_with_data(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentOutput, BenchError> {
    let buckets = cfg.parsed_buckets()?;
    let (model, trace) = match obtain_model(cfg, data)? {
        Some((m, t)) => (Some(m), t),
        None => (None, None),
    };
    let prototypes = build_prototypes(
        cfg.protocol,
        &cfg.selector,
        model.as_ref(),
        &data.gallery,
        &data.queries,
    )?;
    let mut report = evaluate(&data.queries, &prototypes, &cfg.eval)?;
    if !buckets.is_empty() {
        report.per_group = group_breakdown(&report.per_query, &data.gallery, &buckets);
    }
    report.config_echo = serde_json::json!({
        "config": cfg,
        "selector_params": prototypes.base.params,
        "total_prototypes": prototypes.base.total(),
        "final_training_loss": trace.as_ref().and_then(|t| t.epoch_loss.last().copied()),
    });
    let out = ExperimentOutput {
        config: cfg.clone(),
        report,
        prototypes,
        model,
        trace,
    };
    if let Some(dir) = &cfg.output_dir {
        write_artifacts(&out, &data.gallery, dir)?;
    }
    Ok(out)
}

/// Resolve `cfg`, load its data and run it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, BenchError> {
    let cfg = cfg.resolved()?;
    let data = load_data(&cfg)?;
    run_with_data(&cfg, &data)
}

#[derive(Serialize, Deserialize)]
struct OverrideEntry {
    class: ClassId,
    camera: CameraId,
    prototypes: Vec<Vec<f64>>,
}

pub fn overrides_to_json(overrides: &CameraOverrides) -> String {
    let entries: Vec<OverrideEntry> = overrides
        .iter()
        .map(|(&(class, camera), p)| OverrideEntry {
            class,
            camera,
            prototypes: p.clone(),
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("serializes")
}

pub fn overrides_from_json(text: &str) -> Result<CameraOverrides, BenchError> {
    let entries: Vec<OverrideEntry> = serde_json::from_str(text).map_err(|e| BenchError::Artifact(e.to_string()))?;
    Ok(entries
        .into_iter()
        .map(|e| ((e.class, e.camera), e.prototypes))
        .collect())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), BenchError> {
    std::fs::write(path, contents).map_err(|e| BenchError::io(path, e))
}

/// Write report, prototypes, resolved config, label sidecar and (when one
/// was trained) the model and its training trace into `dir`.
pub fn write_artifacts(out: &ExperimentOutput, gallery: &EmbeddingSet, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    write(&dir.join("report.json"), out.report.to_json())?;
    write(&dir.join("report.csv"), out.report.to_csv())?;
    write(&dir.join("prototypes.json"), out.prototypes.base.to_json())?;
    if out.prototypes.protocol == Protocol::CameraFilteredRegen {
        write(
            &dir.join("overrides.json"),
            overrides_to_json(&out.prototypes.overrides),
        )?;
    }
    write(&dir.join("config.toml"), out.config.to_toml())?;
    let labels = serde_json::json!({
        "classes": gallery.class_labels(),
        "cameras": gallery.camera_labels(),
    });
    write(
        &dir.join("labels.json"),
        serde_json::to_string_pretty(&labels).expect("serializes"),
    )?;
    if let (Some(model), Some(trace)) = (&out.model, &out.trace) {
        let path = dir.join("model.gcpm");
        save_checkpoint(model, &path)?;
        write(
            &dir.join("training.json"),
            serde_json::to_string_pretty(trace).expect("serializes"),
        )?;
    }
    Ok(())
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub total_prototypes: usize,
    pub r1: f64,
    pub map: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: &'static str,
    pub rows: Vec<SweepRow>,
    pub outputs: Vec<ExperimentOutput>,
}

fn sweep(
    cfg: &ExperimentConfig,
    axis: &'static str,
    values: &[f64],
    apply: impl Fn(&mut ExperimentConfig, f64),
) -> Result<SweepResult, BenchError> {
    if values.is_empty() {
        return Err(BenchError::Config(format!("{axis} sweep needs at least one value")));
    }
    let base = cfg.resolved()?;
    let data = load_data(&base)?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &v in values {
        let mut point = cfg.clone();
        apply(&mut point, v);
        point.output_dir = cfg.output_dir.as_ref().map(|d| d.join(format!("{axis}={v}")));
        let point = point.resolved()?;
        let out = run_with_data(&point, &data)?;
        info!("{axis} = {v}: R-1 {:.4}, mAP {:.4}", out.report.top1, out.report.map);
        rows.push(SweepRow {
            value: v,
            total_prototypes: out.prototypes.base.total(),
            r1: out.report.top1,
            map: out.report.map,
        });
        outputs.push(out);
    }
    let result = SweepResult { axis, rows, outputs };
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        write(&dir.join(format!("sweep_{axis}.csv")), sweep_table_csv(&result))?;
    }
    Ok(result)
}

/// Run the experiment once per prototype count. Learned selectors are
/// retrained for each count.
pub fn sweep_n(cfg: &ExperimentConfig, n_list: &[usize]) -> Result<SweepResult, BenchError> {
    if n_list.contains(&0) {
        return Err(BenchError::Config("n values must be positive".into()));
    }
    let values: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    sweep(cfg, "n", &values, |c, v| c.selector.n_prototypes = v as usize)
}

pub fn sweep_alpha(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<SweepResult, BenchError> {
    sweep(cfg, "alpha", alphas, |c, v| c.selector.alpha = v)
}

pub fn sweep_table_csv(result: &SweepResult) -> String {
    let mut out = format!("{},total_prototypes,r1,map\n", result.axis);
    for r in &result.rows {
        out.push_str(&format!("{},{},{},{}\n", r.value, r.total_prototypes, r.r1, r.map));
    }
    out
}

/// mAP per gallery-size bucket.
pub fn group_evaluate(cfg: &ExperimentConfig, buckets: &[String]) -> Result<Vec<GroupRow>, BenchError> {
    if buckets.is_empty() {
        return Err(BenchError::Config("group evaluation needs at least one bucket".into()));
    }
    let mut cfg = cfg.clone();
    cfg.buckets = buckets.to_vec();
    Ok(run_experiment(&cfg)?.report.per_group)
}
