use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use gcp_core::bench::{
    self, build_prototypes, generate_synthetic, load_data, run_experiment, sweep_alpha, sweep_n, sweep_table_csv,
    BenchError, DataConfig, ExperimentConfig, SyntheticSpec,
};
use gcp_core::model::{self, save_checkpoint, GcpConfig};
use gcp_core::prototypes::SelectorTag;
use gcp_core::retrieval::{EvalReport, Protocol};
use gcp_core::store::{load_embedding_set, save_embedding_set, Format};
use gcp_core::Error;

#[derive(Parser)]
#[command(
    name = "gcp",
    version,
    about = "Class-prototype selection and prototype-based retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic gallery, query set and training split.
    Gen(GenArgs),
    /// Select prototypes for a gallery and write them as JSON.
    Select(SelectArgs),
    /// Train a GCP model and write a checkpoint.
    Train(TrainArgs),
    /// Select, rank and evaluate; prints a summary and writes reports.
    Eval(EvalArgs),
    /// Evaluate once per prototype count.
    SweepN(SweepNArgs),
    /// Evaluate once per α-FPS interpolation factor.
    SweepAlpha(SweepAlphaArgs),
    /// mAP per gallery class-size bucket.
    GroupEval(GroupArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "tradeoff")]
    preset: String,
    /// Full synthetic spec as JSON; overrides --preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Where data, configuration and a pretrained model come from.
#[derive(Args, Clone)]
struct Source {
    /// Experiment config (TOML). Flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gallery embeddings (.csv or binary).
    #[arg(long, conflicts_with = "preset")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    queries: Option<PathBuf>,
    /// Training split for the gcp selector.
    #[arg(long, requires = "data")]
    train: Option<PathBuf>,
    /// Named synthetic data preset.
    #[arg(long)]
    preset: Option<String>,
    /// Trained GCP checkpoint; skips training.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct Method {
    /// instance, centroid, kcentroid, fps, alphafps or gcp.
    #[arg(long)]
    method: Option<SelectorTag>,
    /// plain or camera-filter.
    #[arg(long)]
    protocol: Option<Protocol>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    method: Method,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output prototype file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training embeddings; defaults to the training split of the data source.
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    epochs: Option<usize>,
    /// Lambda, the weight of the prototype spacing term.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// Output checkpoint file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    method: Method,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Gallery size buckets such as `1-5,6-10,11+`.
    #[arg(long, value_delimiter = ',')]
    buckets: Vec<String>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepNArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    method: Method,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepAlphaArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GroupArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    method: Method,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    buckets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Bench(BenchError::Config(msg.into()))
}

fn base_config(source: &Source) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &source.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(data) = &source.data {
        cfg.data = DataConfig {
            gallery: Some(data.clone()),
            queries: source.queries.clone(),
            train: source.train.clone(),
            ..Default::default()
        };
    } else if let Some(preset) = &source.preset {
        cfg.data = DataConfig {
            preset: Some(preset.clone()),
            ..Default::default()
        };
    } else if source.config.is_none() {
        cfg.data.preset = Some("tradeoff".into());
    }
    if let Some(seed) = source.seed {
        cfg.seed = seed;
    }
    if source.model.is_some() {
        cfg.gcp_checkpoint = source.model.clone();
    }
    Ok(cfg)
}

fn experiment(
    source: &Source,
    method: &Method,
    n: Option<usize>,
    alpha: Option<f64>,
) -> Result<ExperimentConfig, Error> {
    let mut cfg = base_config(source)?;
    if let Some(m) = method.method {
        cfg.selector.method = m;
    }
    if let Some(p) = method.protocol {
        cfg.protocol = p;
    }
    if let Some(n) = n {
        cfg.selector.n_prototypes = n;
    }
    if let Some(a) = alpha {
        cfg.selector.alpha = a;
    }
    if cfg.selector.method == SelectorTag::Gcp && cfg.gcp.is_none() && cfg.gcp_checkpoint.is_none() {
        cfg.gcp = Some(GcpConfig::default());
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| {
        BenchError::Io {
            path: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

fn summary(report: &EvalReport) -> String {
    let cmc5 = report.cmc.get(4).copied().unwrap_or(f64::NAN);
    format!(
        "queries {}  R-1 {:.4}  R-5 {:.4}  mAP {:.4}",
        report.n_queries, report.top1, cmc5, report.map
    )
}

fn gen(args: &GenArgs) -> Result<(), Error> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            serde_json::from_str::<SyntheticSpec>(&text).map_err(|e| config_error(format!("synthetic spec: {e}")))?
        }
        None => SyntheticSpec::preset(&args.preset)?,
    };
    spec.seed = args.seed;
    let format: Format = args.format.parse().map_err(BenchError::from)?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Binary => "gcpe",
    };
    let data = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&args.out).map_err(|e| BenchError::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    for (name, set) in [
        ("gallery", &data.gallery),
        ("queries", &data.queries),
        ("train", &data.train),
    ] {
        let path = args.out.join(format!("{name}.{ext}"));
        save_embedding_set(set, &path, format).map_err(BenchError::from)?;
        println!("{}: {} records, {} classes", path.display(), set.len(), set.n_classes());
    }
    write_file(
        &args.out.join("spec.json"),
        serde_json::to_string_pretty(&spec).expect("serializes"),
    )
}

fn select_cmd(args: &SelectArgs) -> Result<(), Error> {
    let mut cfg = experiment(&args.source, &args.method, args.n, args.alpha)?;
    cfg.protocol = Protocol::Plain;
    let cfg = cfg.resolved()?;
    let data = load_data(&cfg)?;
    let model = bench::obtain_model(&cfg, &data)?.map(|(m, _)| m);
    let prototypes = build_prototypes(
        Protocol::Plain,
        &cfg.selector,
        model.as_ref(),
        &data.gallery,
        &data.queries,
    )?;
    write_file(&args.out, prototypes.base.to_json())?;
    println!(
        "{} prototypes for {} classes -> {}",
        prototypes.base.total(),
        prototypes.base.n_classes(),
        args.out.display()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<(), Error> {
    let cfg = base_config(&args.source)?;
    let mut gcp = cfg.gcp.clone().unwrap_or_default();
    gcp.seed = cfg.seed;
    if let Some(e) = args.epochs {
        gcp.epochs = e;
    }
    if let Some(l) = args.lambda {
        gcp.lambda = l;
    }
    if let Some(n) = args.n {
        gcp.n_prototypes = n;
    }
    let train = match &args.source.train {
        Some(path) => load_embedding_set(path, Format::from_path(path)).map_err(BenchError::from)?,
        None => {
            let resolved = cfg.resolved()?;
            match load_data(&resolved)?.train {
                Some(t) => t,
                None => return Err(config_error("train needs --train or a synthetic data source")),
            }
        }
    };
    gcp.dim = train.dim();
    gcp.n_cameras = gcp.n_cameras.max(train.n_cameras());
    info!("training on {} records, {} classes", train.len(), train.n_classes());
    let (m, trace) = model::train(&train, &gcp)?;
    save_checkpoint(&m, &args.out)?;
    let last = trace.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs, final loss {last:.6} -> {}",
        gcp.epochs,
        args.out.display()
    );
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<(), Error> {
    let mut cfg = experiment(&args.source, &args.method, args.n, args.alpha)?;
    if !args.buckets.is_empty() {
        cfg.buckets = args.buckets.clone();
    }
    if args.out.is_some() {
        cfg.output_dir = args.out.clone();
    }
    let out = run_experiment(&cfg)?;
    println!("{}", summary(&out.report));
    Ok(())
}

fn sweep_n_cmd(args: &SweepNArgs) -> Result<(), Error> {
    let mut cfg = experiment(&args.source, &args.method, None, args.alpha)?;
    cfg.output_dir = args.out.clone();
    let result = sweep_n(&cfg, &args.n)?;
    print!("{}", sweep_table_csv(&result));
    Ok(())
}

fn sweep_alpha_cmd(args: &SweepAlphaArgs) -> Result<(), Error> {
    let method = Method {
        method: Some(SelectorTag::AlphaFps),
        protocol: args.protocol,
    };
    let mut cfg = experiment(&args.source, &method, args.n, None)?;
    cfg.output_dir = args.out.clone();
    let result = sweep_alpha(&cfg, &args.alpha)?;
    print!("{}", sweep_table_csv(&result));
    Ok(())
}

fn group_cmd(args: &GroupArgs) -> Result<(), Error> {
    let mut cfg = experiment(&args.source, &args.method, args.n, args.alpha)?;
    cfg.buckets = args.buckets.clone();
    cfg.output_dir = args.out.clone();
    let out = run_experiment(&cfg)?;
    println!("bucket,count,map");
    for row in &out.report.per_group {
        let map = row.map.map(|m| m.to_string()).unwrap_or_default();
        println!("{},{},{}", row.bucket, row.count, map);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Select(a) => select_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::SweepN(a) => sweep_n_cmd(a),
        Command::SweepAlpha(a) => sweep_alpha_cmd(a),
        Command::GroupEval(a) => group_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().as_str().unwrap_or("invalid arguments");
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {msg}: {first}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
