use gcp_core::bench::{
    generate_synthetic, load_data, overrides_from_json, run_experiment, run_with_data, sweep_n, DataConfig,
    ExperimentConfig, SizeDistribution, SyntheticSpec,
};
use gcp_core::model::{load_checkpoint, select_gcp, GcpConfig};
use gcp_core::prototypes::{PrototypeSet, SelectorTag};
use gcp_core::retrieval::{EvalReport, Protocol};
use gcp_core::selectors::SelectorConfig;
use gcp_core::store::{save_embedding_set, Format};

fn tiny_gcp() -> GcpConfig {
    GcpConfig {
        dim: 8,
        n_heads: 2,
        ffn_dim: 16,
        n_blocks: 1,
        epochs: 3,
        batch_classes: 4,
        instances_per_class: 3,
        lr: 0.003,
        ..GcpConfig::default()
    }
}

fn tiny(method: SelectorTag) -> ExperimentConfig {
    ExperimentConfig {
        seed: 4,
        data: DataConfig {
            preset: Some("tiny".into()),
            ..Default::default()
        },
        selector: SelectorConfig::with_method(method),
        gcp: (method == SelectorTag::Gcp).then(tiny_gcp),
        ..Default::default()
    }
}

#[test]
fn gcp_runs_are_deterministic() {
    let mut cfg = tiny(SelectorTag::Gcp);
    cfg.protocol = Protocol::CameraFilteredRegen;
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.prototypes.base, b.prototypes.base);
    assert_eq!(a.prototypes.overrides, b.prototypes.overrides);
    assert_eq!(a.model.unwrap().params, b.model.unwrap().params);
}

#[test]
fn instance_top1_is_nearest_neighbour_accuracy() {
    let cfg = tiny(SelectorTag::Instance).resolved().unwrap();
    let data = load_data(&cfg).unwrap();
    let report = run_with_data(&cfg, &data).unwrap().report;
    let correct = data
        .queries
        .records()
        .iter()
        .filter(|q| {
            let nearest = data
                .gallery
                .records()
                .iter()
                .map(|g| {
                    let d: f64 = g.vector.iter().zip(&q.vector).map(|(a, b)| (a - b).powi(2)).sum();
                    (d, g.class_id)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap();
            nearest.1 == q.class_id
        })
        .count();
    assert_eq!(report.top1, correct as f64 / data.queries.len() as f64);
}

#[test]
fn camera_filter_cache_matches_fresh_regeneration() {
    let mut cfg = tiny(SelectorTag::Gcp);
    cfg.protocol = Protocol::CameraFilteredRegen;
    let cfg = cfg.resolved().unwrap();
    let data = load_data(&cfg).unwrap();
    let out = run_with_data(&cfg, &data).unwrap();
    let model = out.model.as_ref().unwrap();
    for q in data.queries.records() {
        let cached = out.prototypes.class_prototypes(q.class_id, q).unwrap();
        let (fresh, _) = model
            .class_prototypes(&data.gallery, q.class_id, cfg.selector.n_prototypes, Some(q.camera_id))
            .unwrap();
        assert_eq!(cached, fresh.as_slice());
        // Other classes keep their shared prototypes.
        for c in data.gallery.class_ids().filter(|&c| c != q.class_id) {
            assert_eq!(out.prototypes.class_prototypes(c, q), out.prototypes.base.get(c));
        }
    }
}

#[test]
fn artifacts_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(SelectorTag::Gcp);
    cfg.protocol = Protocol::CameraFilteredRegen;
    cfg.buckets = vec!["1-4".into(), "5+".into()];
    cfg.output_dir = Some(dir.path().to_path_buf());
    let out = run_experiment(&cfg).unwrap();
    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();

    assert_eq!(EvalReport::from_json(&read("report.json")).unwrap(), out.report);
    assert_eq!(
        PrototypeSet::from_json(&read("prototypes.json")).unwrap(),
        out.prototypes.base
    );
    assert_eq!(
        overrides_from_json(&read("overrides.json")).unwrap(),
        out.prototypes.overrides
    );
    assert_eq!(ExperimentConfig::from_toml(&read("config.toml")).unwrap(), out.config);
    assert!(read("report.csv").starts_with("row,k,cmc,top1,map,n_queries\n"));

    let model = load_checkpoint(&dir.path().join("model.gcpm")).unwrap();
    assert_eq!(&model, out.model.as_ref().unwrap());
    let data = load_data(&out.config).unwrap();
    let again = select_gcp(&data.gallery, &model, cfg.selector.n_prototypes, None).unwrap();
    assert_eq!(again.per_class, out.prototypes.base.per_class);

    // Re-running from the echoed config reproduces the report.
    let mut echoed = ExperimentConfig::from_toml(&read("config.toml")).unwrap();
    echoed.output_dir = None;
    assert_eq!(run_experiment(&echoed).unwrap().report.per_query, out.report.per_query);
}

#[test]
fn file_data_matches_in_memory_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        seed: 4,
        ..SyntheticSpec::preset("tiny").unwrap()
    };
    let data = generate_synthetic(&spec).unwrap();
    for (name, set) in [("g.csv", &data.gallery), ("q.gcpe", &data.queries)] {
        save_embedding_set(set, &dir.path().join(name), Format::from_path(name.as_ref())).unwrap();
    }
    let from_files = ExperimentConfig {
        seed: 4,
        data: DataConfig {
            gallery: Some(dir.path().join("g.csv")),
            queries: Some(dir.path().join("q.gcpe")),
            ..Default::default()
        },
        selector: SelectorConfig::with_method(SelectorTag::AlphaFps),
        ..Default::default()
    };
    let a = run_experiment(&from_files).unwrap().report;
    let b = run_experiment(&tiny(SelectorTag::AlphaFps)).unwrap().report;
    assert_eq!(a.cmc, b.cmc);
    assert!((a.map - b.map).abs() < 1e-9);
}

#[test]
fn group_rows_account_for_every_query() {
    let mut cfg = tiny(SelectorTag::Fps);
    cfg.buckets = vec!["1-3".into(), "4-5".into(), "6+".into()];
    let report = run_experiment(&cfg).unwrap().report;
    let total: usize = report.per_group.iter().map(|r| r.count).sum();
    assert_eq!(total, report.n_queries);
    let weighted: f64 = report
        .per_group
        .iter()
        .filter_map(|r| r.map.map(|m| m * r.count as f64))
        .sum();
    assert!((weighted / report.n_queries as f64 - report.map).abs() < 1e-12);
}

#[test]
fn empty_bucket_has_no_map() {
    let mut cfg = tiny(SelectorTag::Centroid);
    cfg.data = DataConfig {
        synthetic: Some(SyntheticSpec {
            class_sizes: SizeDistribution::Fixed { n: 5 },
            ..SyntheticSpec::preset("tiny").unwrap()
        }),
        ..Default::default()
    };
    cfg.buckets = vec!["1-10".into(), "11+".into()];
    let rows = run_experiment(&cfg).unwrap().report.per_group;
    assert_eq!(rows[0].count, 16);
    assert_eq!((rows[1].count, rows[1].map), (0, None));
}

#[test]
fn well_separated_classes_are_solved_by_centroids() {
    let mut cfg = tiny(SelectorTag::Centroid);
    cfg.data = DataConfig {
        synthetic: Some(SyntheticSpec {
            n_classes: 50,
            class_center_scale: 1.0,
            within_class_noise: 0.01,
            camera_offset_scale: 0.0,
            ..SyntheticSpec::default()
        }),
        ..Default::default()
    };
    assert_eq!(run_experiment(&cfg).unwrap().report.top1, 1.0);
}

#[test]
fn single_point_sweep_equals_direct_run() {
    let mut cfg = tiny(SelectorTag::Kcentroid);
    cfg.selector.n_prototypes = 2;
    let direct = run_experiment(&cfg).unwrap().report;
    let swept = sweep_n(&cfg, &[2]).unwrap();
    assert_eq!(swept.rows.len(), 1);
    assert_eq!((swept.rows[0].r1, swept.rows[0].map), (direct.top1, direct.map));
    assert_eq!(swept.outputs[0].report, direct);
}

#[test]
fn config_conflicts_fail_before_compute() {
    let mut cfg = tiny(SelectorTag::Gcp);
    cfg.gcp = None;
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = tiny(SelectorTag::Fps);
    cfg.data.gallery = Some("/nonexistent.csv".into());
    let err = run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("exactly one"), "{err}");
}
