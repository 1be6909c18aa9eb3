//! `gladformer` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use super::{
    apply_downsample, cross_validate, evaluate, load_model, prepare_inputs, save_model, train, HarnessError,
    TrainConfig,
};
use crate::dataset::{
    dataset_stats, generate_synthetic, load_tudataset_with, make_splits, write_tudataset, FeatureMode, GraphDataset,
    SplitSpec, SynthConfig,
};
use crate::spectral::{self, DEFAULT_ORACLE_CAP};

/// `println!` that stops quietly when stdout is closed, e.g. piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GLAD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "gladformer-out";

#[derive(Debug, Parser)]
#[command(name = "gladformer", version, about = "Graph-level anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a stratified holdout split and report test metrics.
    Train(RunArgs),
    /// Stratified k-fold cross-validation.
    Cv(RunArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Laplacian spectrum and spectral energy of one graph.
    Spectrum(SpectrumArgs),
    /// Export graph embeddings as CSV.
    Embed(EmbedArgs),
    /// Write a synthetic planted-anomaly dataset.
    Synth(SynthArgs),
    /// Dataset statistics as JSON.
    Stats(DataArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Features {
    Auto,
    Concat,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding the dataset files (or a NAME subdirectory).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    name: String,
    #[arg(long, value_enum, default_value = "auto")]
    features: Features,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Config file, JSON or `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn unit_open(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} must lie in [0, 1)"))
    }
}

fn unit_closed(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} must lie in [0, 1]"))
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie in (0, 1]"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("{s:?} is not a positive integer")),
    }
}

/// Command-line overrides, one per [`TrainConfig`] field.
#[derive(Debug, Args, Serialize)]
struct Overrides {
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layers: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bank_order: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lowhigh_layers: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dim: Option<usize>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    heads: Option<usize>,
    #[arg(long, value_parser = unit_open)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[arg(long, value_parser = unit_closed)]
    #[serde(skip_serializing_if = "Option::is_none")]
    psi: Option<f64>,
    #[arg(long, value_parser = unit_open)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    class_weight: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long, value_parser = positive)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long, value_parser = fraction)]
    #[serde(skip_serializing_if = "Option::is_none")]
    downsample: Option<f64>,
    #[arg(long, value_parser = unit_closed)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_frac: Option<f64>,
    #[arg(long, value_parser = unit_closed)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_frac: Option<f64>,
    #[arg(long, value_parser = unit_closed)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_frac: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    folds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Part {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which part of the checkpoint's holdout split to score.
    #[arg(long, value_enum, default_value = "all")]
    part: Part,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Position of the graph in the dataset, from 0.
    #[arg(long, default_value_t = 0)]
    graph: usize,
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    cap: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    min_nodes: usize,
    #[arg(long, default_value_t = 16)]
    max_nodes: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 0.15)]
    edge_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flag, then environment, then the default.
fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn dataset_dir(dir: &Path, name: &str) -> PathBuf {
    if dir.join(format!("{name}_A.txt")).exists() {
        dir.to_path_buf()
    } else {
        dir.join(name)
    }
}

fn load(args: &DataArgs) -> Result<GraphDataset, HarnessError> {
    let mode = match args.features {
        Features::Auto => FeatureMode::Auto,
        Features::Concat => FeatureMode::Concat,
    };
    Ok(load_tudataset_with(&dataset_dir(&args.data, &args.name), &args.name, mode, None)?)
}

fn write(path: &Path, body: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::Io(parent.to_path_buf(), e))?;
    }
    fs::write(path, body).map_err(|e| HarnessError::Io(path.to_path_buf(), e))
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run_config(args: &RunArgs) -> Result<TrainConfig, HarnessError> {
    let mut layers = Vec::new();
    if let Some(path) = &args.config {
        layers.push(TrainConfig::from_file(path)?);
    }
    match serde_json::to_value(&args.overrides) {
        Ok(Value::Object(m)) => layers.push(m),
        _ => unreachable!("overrides serialize to an object"),
    }
    let cfg = TrainConfig::merged(&layers)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: RunArgs) -> Result<(), HarnessError> {
    let cfg = run_config(&args)?;
    let ds = apply_downsample(&cfg, &load(&args.data)?)?;
    let split = make_splits(&ds, cfg.holdout(), cfg.seed)?;
    let (model, report) = train(&cfg, &ds, &split)?;
    let dir = out_dir(args.out);
    report.write(&dir)?;
    save_model(&dir.join("model.json"), &model, &cfg)?;
    write(&dir.join("split.json"), &pretty(&split))?;
    let best_epoch = report.folds.first().and_then(|f| f.best_epoch);
    out!("{}", pretty(&json!({ "test": report.test(), "best_epoch": best_epoch, "out": dir })));
    Ok(())
}

fn cmd_cv(args: RunArgs) -> Result<(), HarnessError> {
    let cfg = run_config(&args)?;
    let ds = apply_downsample(&cfg, &load(&args.data)?)?;
    let report = cross_validate(&cfg, &ds)?;
    let dir = out_dir(args.out);
    report.write(&dir)?;
    out!("{}", pretty(&json!({ "summary": report.summary, "out": dir })));
    Ok(())
}

fn checkpoint_dataset(data: &DataArgs, checkpoint: &Path) -> Result<(crate::model::Model, TrainConfig, GraphDataset), HarnessError> {
    let (model, train_cfg) = load_model(checkpoint)?;
    let cfg = train_cfg.unwrap_or_default();
    let ds = apply_downsample(&cfg, &load(data)?)?;
    if ds.d != model.config.in_dim {
        return Err(HarnessError::Contract(format!(
            "dataset has {} features, checkpoint expects {}",
            ds.d, model.config.in_dim
        )));
    }
    Ok((model, cfg, ds))
}

fn cmd_eval(args: EvalArgs) -> Result<(), HarnessError> {
    let (model, cfg, ds) = checkpoint_dataset(&args.data, &args.checkpoint)?;
    let idx: Vec<usize> = match args.part {
        Part::All => (0..ds.len()).collect(),
        part => {
            let SplitSpec::Holdout { train, val, test, .. } = make_splits(&ds, cfg.holdout(), cfg.seed)? else {
                unreachable!()
            };
            match part {
                Part::Train => train,
                Part::Val => val,
                _ => test,
            }
        }
    };
    let inputs = prepare_inputs(&ds, &cfg)?;
    let metrics = evaluate(&model, &inputs, &idx, cfg.threshold, None)?;
    let body = pretty(&metrics);
    write(&out_dir(args.out).join("metrics.json"), &body)?;
    out!("{body}");
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<(), HarnessError> {
    let (model, cfg, ds) = checkpoint_dataset(&args.data, &args.checkpoint)?;
    let inputs = prepare_inputs(&ds, &cfg)?;
    let mut csv = String::from("graph_id,label");
    for k in 0..model.config.out_dim {
        let _ = write!(csv, ",h{k}");
    }
    csv.push('\n');
    for input in &inputs {
        let (_, emb) = model.embed(input)?;
        let _ = write!(csv, "{},{}", input.id, input.label.bit());
        for v in emb {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let path = out_dir(args.out).join("embeddings.csv");
    write(&path, &csv)?;
    out!("{}", path.display());
    Ok(())
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<(), HarnessError> {
    let ds = load(&args.data)?;
    let g = ds.graphs.get(args.graph).ok_or_else(|| {
        HarnessError::Contract(format!("graph {} out of range for {} graphs", args.graph, ds.len()))
    })?;
    let report = spectral::spectrum_report(g, &g.x, args.cap)?;
    let rayleigh = spectral::rayleigh_vector(&g.x, &spectral::normalized_laplacian(g));
    out!(
        "{}",
        pretty(&json!({
            "graph": args.graph,
            "n": g.n(),
            "label": g.y.bit(),
            "eigenvalues": report.eigenvalues.to_vec(),
            "energy": report.energy.to_vec(),
            "rayleigh": rayleigh.to_vec(),
        }))
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), HarnessError> {
    let cfg = SynthConfig {
        n_graphs: args.n,
        anomaly_rate: args.rate,
        min_nodes: args.min_nodes,
        max_nodes: args.max_nodes,
        dim: args.dim,
        edge_prob: args.edge_prob,
        noise: args.noise,
        amplitude: args.amplitude,
        seed: args.seed,
    };
    let mut ds = generate_synthetic(&cfg)?;
    ds.name = args.name.clone();
    let dir = out_dir(args.out).join(&args.name);
    write_tudataset(&ds, &dir).map_err(|e| HarnessError::Io(dir.clone(), e))?;
    out!("{}", pretty(&json!({ "dir": dir, "stats": dataset_stats(&ds) })));
    Ok(())
}

fn cmd_stats(args: DataArgs) -> Result<(), HarnessError> {
    let ds = load(&args)?;
    let mut v = serde_json::to_value(dataset_stats(&ds)).expect("stats serialize");
    if let (Some(p), Value::Object(m)) = (&ds.provenance, &mut v) {
        m.insert("provenance".into(), Value::String(p.clone()));
    }
    out!("{}", pretty(&v));
    Ok(())
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}
