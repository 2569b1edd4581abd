//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout; exits nonzero if any
//! criterion fails.

mod common;

use std::time::{Duration, Instant};

use gcp_core::bench::{load_data, run_with_data, sweep_n, ExperimentConfig};
use gcp_core::model::{batch_loss_and_grad, plan_epoch, GcpConfig};
use gcp_core::prototypes::{PrototypeSet, SelectorTag};
use gcp_core::retrieval::{
    coverage_violations, evaluate, precision_at_k, rank_query, EvalOptions, Protocol, QueryPrototypes,
};
use gcp_core::selectors::{alpha_fps, fps_from_centroid, select, SelectorConfig};
use gcp_core::store::{CameraId, ClassId, EmbeddingRecord, EmbeddingSet};
use gcp_core::vector::euclidean;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRADEOFF_CONFIG: &str = include_str!("../../../configs/tradeoff.toml");

// Pinned tolerances and budgets.
const HAND_TRACE_TOL: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const GRAD_MIN_KINK_GAP: f64 = 1e-4;
const GRAD_DRAWS: usize = 5;
const GRAD_COORDS_PER_TENSOR: usize = 6;
const PERMUTATION_TOL: f64 = 1e-9;
const DECODER_SEEDS: u64 = 20;
const ORACLE_INSTANCES: usize = 120;
const FPS_CLASSES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn record(id: &str, v: [f64; 2], class: u32) -> EmbeddingRecord {
    EmbeddingRecord {
        id: id.into(),
        vector: v.to_vec(),
        class_id: ClassId(class),
        camera_id: CameraId(0),
    }
}

fn set_of(points: &[([f64; 2], u32)]) -> EmbeddingSet {
    let records = points
        .iter()
        .enumerate()
        .map(|(i, (v, c))| record(&format!("x{i}"), *v, *c))
        .collect();
    EmbeddingSet::from_records(records).unwrap()
}

/// Two neighbouring classes (class 0 "orange", class 1 "blue") and a query
/// of class 0 whose five nearest gallery points are 3 orange and 2 blue.
fn neighbouring_classes() -> (EmbeddingSet, EmbeddingRecord) {
    let gallery = set_of(&[
        ([0.3, 0.1], 0),
        ([0.8, 0.3], 0),
        ([1.0, -0.4], 0),
        ([-0.6, 0.2], 0),
        ([0.2, -0.8], 0),
        ([-0.4, -0.3], 0),
        ([2.0, 0.2], 1),
        ([2.3, -0.3], 1),
        ([3.1, 0.0], 1),
        ([3.5, 0.5], 1),
        ([2.8, -0.6], 1),
        ([3.4, -0.2], 1),
    ]);
    (gallery, record("q", [1.5, 0.0], 0))
}

/// Blue (class 1) has most of its points right next to orange (class 0) and
/// one far outlier, so its centroid sits in front of orange's.
fn shifted_centroid() -> (EmbeddingSet, EmbeddingRecord) {
    let gallery = set_of(&[
        ([-5.0, 0.0], 0),
        ([-3.0, 0.5], 0),
        ([-2.0, -0.5], 0),
        ([0.7, 0.0], 0),
        ([1.5, 0.0], 1),
        ([2.0, 0.5], 1),
        ([2.0, -0.5], 1),
        ([2.5, 0.0], 1),
        ([9.0, 0.0], 1),
    ]);
    (gallery, record("q", [0.8, 0.0], 0))
}

fn nearest_class(q: &EmbeddingRecord, protos: &PrototypeSet) -> ClassId {
    rank_query(q, protos, Protocol::Plain).unwrap().entries[0].class_id
}

fn toy_layouts() -> Outcome {
    let (gallery, q) = neighbouring_classes();
    let instance = select(&gallery, &SelectorConfig::with_method(SelectorTag::Instance)).unwrap();
    let p5 = precision_at_k(&rank_query(&q, &instance, Protocol::Plain).unwrap(), q.class_id, 5);
    let centroid = select(&gallery, &SelectorConfig::with_method(SelectorTag::Centroid)).unwrap();
    let p1 = precision_at_k(&rank_query(&q, &centroid, Protocol::Plain).unwrap(), q.class_id, 1);

    let (gallery, q) = shifted_centroid();
    let centroid = select(&gallery, &SelectorConfig::with_method(SelectorTag::Centroid)).unwrap();
    let mut afps = SelectorConfig::with_method(SelectorTag::AlphaFps);
    afps.n_prototypes = 1;
    afps.alpha = 0.25;
    let afps = select(&gallery, &afps).unwrap();
    let centroid_class = nearest_class(&q, &centroid);
    let afps_class = nearest_class(&q, &afps);
    let two = afps.get(ClassId(0)).unwrap().len() == 2;
    let violations = coverage_violations(&gallery, &centroid).violations;
    check(
        p5 == 0.6 && p1 == 1.0 && centroid_class != q.class_id && afps_class == q.class_id && two && violations > 0,
        format!(
            "instance p@5 {p5}, centroid p@1 {p1}; shifted layout: centroid -> class {}, 2-prototype α-FPS -> class {}, centroid coverage violations {violations}",
            centroid_class.0, afps_class.0
        ),
    )
}

fn alpha_fps_trace() -> Outcome {
    let pts = [[0.0], [1.0], [10.0]];
    let views: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let got: Vec<f64> = alpha_fps(&views, 2, 0.25).prototypes.iter().map(|p| p[0]).collect();
    let want = [11.0 / 3.0, 8.416_666_666_666_666, 0.916_666_666_666_666_6];
    let traced = got.len() == 3 && got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= HAND_TRACE_TOL);
    let raw: Vec<f64> = alpha_fps(&views, 2, 0.0).prototypes[1..].iter().map(|p| p[0]).collect();
    let dup = alpha_fps(&views, 2, 1.0).prototypes;
    let limits = raw == [10.0, 0.0] && dup.iter().all(|p| p == &dup[0]);
    check(
        traced && limits,
        format!("prototypes {got:.4?}; α=0 picks {raw:?}; α=1 all equal: {}", limits),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mismatches = 0;
    for _ in 0..ORACLE_INSTANCES {
        let n_classes = rng.random_range(1..=10);
        let dim = rng.random_range(1..=4);
        let per_class = (64 / n_classes).max(1);
        let sizes: Vec<usize> = (0..n_classes).map(|_| rng.random_range(1..=per_class.min(8))).collect();
        let gallery = common::grid_set(&mut rng, &sizes, dim);
        let q_sizes: Vec<usize> = (0..n_classes).map(|_| rng.random_range(1..=3)).collect();
        let queries = common::grid_set(&mut rng, &q_sizes, dim);
        let protos = common::random_grid_prototypes(&mut rng, n_classes, 8, dim);
        let opts = EvalOptions {
            max_rank: 10,
            ..Default::default()
        };
        let report = evaluate(&queries, &QueryPrototypes::shared(protos.clone()), &opts).unwrap();
        let oracle = common::brute_force_eval(&queries, &protos, 10);
        if report.cmc != oracle.cmc || report.map != oracle.map {
            mismatches += 1;
        }
        let instance = select(&gallery, &SelectorConfig::with_method(SelectorTag::Instance)).unwrap();
        for q in queries.records() {
            let got: Vec<(ClassId, usize)> = rank_query(q, &instance, Protocol::Plain)
                .unwrap()
                .entries
                .iter()
                .map(|e| (e.class_id, e.prototype_index))
                .collect();
            if got != common::brute_force_nn(&gallery, q) {
                mismatches += 1;
            }
        }
    }
    check(
        mismatches == 0,
        format!("{ORACLE_INSTANCES} instances, {mismatches} mismatches"),
    )
}

fn fps_maximin() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut failures = 0;
    for _ in 0..FPS_CLASSES {
        let n = rng.random_range(2..40);
        let dim = rng.random_range(1..6);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let views: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let order = fps_from_centroid(&views, rng.random_range(1..=n));
        for j in 1..order.len() {
            let score = |i: usize| {
                order[..j]
                    .iter()
                    .map(|&s| euclidean(&pts[i], &pts[s]))
                    .fold(f64::INFINITY, f64::min)
            };
            let best = (0..n)
                .filter(|i| !order[..j].contains(i))
                .map(score)
                .fold(f64::NEG_INFINITY, f64::max);
            if score(order[j]) != best {
                failures += 1;
            }
        }
    }
    check(
        failures == 0,
        format!("{FPS_CLASSES} classes, {failures} non-maximin picks"),
    )
}

fn gradient_check() -> Outcome {
    let cfg = GcpConfig {
        n_cameras: 4,
        batch_classes: 4,
        instances_per_class: 4,
        ..GcpConfig::default()
    };
    let mut worst: (f64, String) = (0.0, String::new());
    let mut draws = 0;
    let mut rejected = 0;
    let mut seed = 0u64;
    while draws < GRAD_DRAWS && seed < 100 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = common::random_set(&mut rng, &[6, 5, 7, 4], cfg.dim, 4, 1.0);
        let dropout = draws % 2 == 1;
        let cfg = GcpConfig { seed, ..cfg.clone() };
        let model = common::jittered(cfg.clone(), seed, 0.2);
        let plan = &plan_epoch(&set, &cfg, 0)[0];
        let (bl, _) = batch_loss_and_grad(&model.params, &cfg, &set, plan, dropout, false).unwrap();
        if bl.min_kink_gap < GRAD_MIN_KINK_GAP || bl.triplets_active == 0 {
            rejected += 1;
            continue;
        }
        draws += 1;
        for g in common::finite_difference_check(
            &model,
            &set,
            plan,
            dropout,
            GRAD_EPS,
            Some((GRAD_COORDS_PER_TENSOR, seed)),
        ) {
            if g.rel_err > worst.0 || worst.1.is_empty() {
                worst = (g.rel_err, g.name);
            }
        }
    }
    check(
        draws == GRAD_DRAWS && worst.0 <= GRAD_REL_TOL,
        format!(
            "{draws} draws (dim {}, {} blocks, {rejected} rejected near a hinge), worst rel err {:.2e} on {}",
            cfg.dim, cfg.n_blocks, worst.0, worst.1
        ),
    )
}

fn decoder_invariants() -> Outcome {
    let mut drift: f64 = 0.0;
    let mut prefix_ok = true;
    for seed in 0..DECODER_SEEDS {
        let cfg = GcpConfig {
            n_cameras: 3,
            seed,
            ..GcpConfig::default()
        };
        let model = common::jittered(cfg, seed, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let tokens = Array2::from_shape_fn((rng.random_range(2..12), 32), |_| rng.random_range(-1.0..1.0));
        let base = model.generate_tokens(&tokens, 5);
        let mut order: Vec<usize> = (0..tokens.nrows()).collect();
        order.shuffle(&mut rng);
        let moved = model.generate_tokens(&tokens.select(Axis(0), &order), 5);
        for (a, b) in base.iter().zip(&moved) {
            drift = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(drift, f64::max);
        }
        let longer = model.generate_tokens(&tokens, 8);
        prefix_ok &= longer[..5] == base[..];
    }
    check(
        drift <= PERMUTATION_TOL && prefix_ok,
        format!("{DECODER_SEEDS} seeds, permutation drift {drift:.1e}, causal prefix exact: {prefix_ok}"),
    )
}

fn min_spacing(p: &PrototypeSet) -> f64 {
    let mut m = f64::INFINITY;
    for protos in p.per_class.values() {
        for i in 0..protos.len() {
            for j in i + 1..protos.len() {
                m = m.min(euclidean(&protos[i], &protos[j]));
            }
        }
    }
    m
}

struct Tradeoff {
    count_direction: Outcome,
    ordering: Outcome,
    anti_collapse: Outcome,
}

fn tradeoff_criteria() -> Tradeoff {
    let cfg = ExperimentConfig::from_toml(TRADEOFF_CONFIG).unwrap();
    let start = Instant::now();
    let sweep = sweep_n(&cfg, &[1, 2, 3, 6]).unwrap();
    let sweep_time = start.elapsed();
    let row = |n: f64| sweep.rows.iter().find(|r| r.value == n).unwrap();
    let (r1, r6) = (row(1.0), row(6.0));
    let table: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| format!("N={} R-1 {:.4} mAP {:.4}", r.value, r.r1, r.map))
        .collect();
    let count_direction = check(
        r6.r1 >= r1.r1 && r6.map <= r1.map && sweep_time < Duration::from_secs(600),
        format!("{} ({:.0?})", table.join(", "), sweep_time),
    );

    let resolved = cfg.resolved().unwrap();
    let data = load_data(&resolved).unwrap();
    let baseline = |method: SelectorTag| {
        let mut c = resolved.clone();
        c.selector.method = method;
        c.gcp = None;
        run_with_data(&c.resolved().unwrap(), &data).unwrap().report.map
    };
    let (centroid, instance) = (baseline(SelectorTag::Centroid), baseline(SelectorTag::Instance));
    let gcp3 = &sweep.outputs[sweep.rows.iter().position(|r| r.value == 3.0).unwrap()];
    let ordering = check(
        gcp3.report.map >= centroid && gcp3.report.map >= instance,
        format!(
            "mAP gcp(N=3) {:.4}, centroid {centroid:.4}, instance {instance:.4}",
            gcp3.report.map
        ),
    );

    let mut no_reg = gcp3.config.clone();
    no_reg.gcp.as_mut().unwrap().lambda = 0.0;
    let collapsed = run_with_data(&no_reg, &data).unwrap();
    let (with, without) = (
        min_spacing(&gcp3.prototypes.base),
        min_spacing(&collapsed.prototypes.base),
    );
    let anti_collapse = check(
        with > without,
        format!("min intra-class prototype spacing λ=1 {with:.4}, λ=0 {without:.4}"),
    );
    Tradeoff {
        count_direction,
        ordering,
        anti_collapse,
    }
}

fn performance() -> Outcome {
    let cfg = ExperimentConfig::from_toml(
        r#"
        version = 1
        [data]
        preset = "perf"
        [selector]
        method = "alpha_fps"
        n_prototypes = 3
        "#,
    )
    .unwrap()
    .resolved()
    .unwrap();
    let data = load_data(&cfg).unwrap();
    let start = Instant::now();
    let protos = select(&data.gallery, &cfg.selector).unwrap();
    let report = evaluate(&data.queries, &QueryPrototypes::shared(protos), &cfg.eval).unwrap();
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(10)
            && data.gallery.len() == 10_000
            && data.gallery.dim() == 512
            && data.gallery.n_classes() == 500
            && report.n_queries == 1000,
        format!(
            "{} records x {} dims, {} classes, {} queries in {elapsed:.2?} (R-1 {:.4})",
            data.gallery.len(),
            data.gallery.dim(),
            data.gallery.n_classes(),
            report.n_queries,
            report.top1
        ),
    )
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if elapsed > limit {
        out.pass = false;
    }
    out.detail = format!("{} [{elapsed:.2?} / {limit:?}]", out.detail);
    out
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("toy-layouts", timed(Duration::from_secs(1), toy_layouts)),
        ("alpha-fps-hand-trace", timed(Duration::from_secs(1), alpha_fps_trace)),
        ("oracle-equivalence", timed(Duration::from_secs(30), oracle_equivalence)),
        ("fps-maximin", timed(Duration::from_secs(10), fps_maximin)),
        ("gradient-check", timed(Duration::from_secs(120), gradient_check)),
        ("decoder-invariants", timed(Duration::from_secs(30), decoder_invariants)),
    ];
    let t = tradeoff_criteria();
    results.push(("count-direction", t.count_direction));
    results.push(("baseline-ordering", t.ordering));
    results.push(("anti-collapse", t.anti_collapse));
    results.push(("performance-floor", performance()));

    let mut failed = 0;
    for (name, out) in &results {
        println!("{} {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        failed += usize::from(!out.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
