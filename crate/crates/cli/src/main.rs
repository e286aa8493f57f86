//! `spikinggat`: train, evaluate, export, and check spiking graph
//! attention networks on datasets in the neutral directory format.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spikinggat::config::{Mode, RunConfig};
use spikinggat::graph::{batch_graphs, load_dataset, sgf, Dataset, Labels, Task};
use spikinggat::model::{grad_check_model, Checkpoint, Model, ModelConfig, ModelInput};
use spikinggat::synthetic;
use spikinggat::train::{check_compatible, evaluate, fit, Split, Summary, TaskData};
use spikinggat::Error;

#[derive(Parser)]
#[command(name = "spikinggat", version, about = "Spiking graph attention networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write per-trial logs, checkpoints,
    /// and a summary.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Write time-averaged last-hidden-layer outputs for every node.
    ExportEmbeddings(ExportArgs),
    /// Compare model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print dataset statistics.
    Info(InfoArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds as `a..b` or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_name = "spiking|spike_free_oracle")]
    mode: Option<Mode>,
}

impl ConfigArgs {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => {
                let mut c = base;
                c.apply(&spikinggat::config::KeyValues::read(p).map_err(to_config_error)?)?;
                c
            }
            None => base,
        };
        let mut extra: Vec<String> = Vec::new();
        if let Some(m) = self.mode {
            extra.push(format!("mode={m}"));
        }
        if let Some(s) = &self.seeds {
            extra.push(format!("seeds={s}"));
        }
        extra.extend(self.overrides.iter().cloned());
        cfg.apply_overrides(extra.iter().map(String::as_str))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn to_config_error(e: Error) -> Error {
    match e {
        Error::Format { path, message } => Error::Config(format!("{}: {message}", path.display())),
        Error::MissingFile(path) => Error::Config(format!("missing config file {}", path.display())),
        other => other,
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    parallel_trials: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s}; expected train, val, or test")),
    }
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Directory receiving `embeddings.bin` and `labels.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the backward pass; the check must then fail.
    #[arg(long, hide = true)]
    inject_bug: bool,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    dataset: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ExportEmbeddings(a) => export(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Info(a) => info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        Error::Empty(_) => 2,
        e if e.is_data_error() => 2,
        _ => 1,
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn load(dir: &Path) -> Result<Dataset, Error> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    load_dataset(dir)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = a.config.resolve(RunConfig::default())?;
    let ds = load(&a.dataset)?;
    let model_cfg = ModelConfig::new(cfg.model.clone(), ds.feat_dim(), ds.num_classes(), ds.task())?;
    let data = TaskData::new(&ds, cfg.train.batch_size)?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    let resolved = a.out.join("run.cfg.resolved");
    fs::write(&resolved, cfg.to_kv().to_text()).map_err(|e| io_error(&resolved, e))?;

    let results = fit(&data, &model_cfg, &cfg.train, a.parallel_trials);
    let mut values = Vec::new();
    let mut failure = None;
    for (i, (seed, r)) in cfg.train.seeds.iter().zip(results).enumerate() {
        match r {
            Ok(t) => {
                t.log.write_csv(&a.out.join(format!("metrics_trial{i}_seed{seed}.csv")))?;
                Checkpoint {
                    model: t.model,
                    seed: t.seed,
                    epoch: t.epochs,
                }
                .save(&a.out.join(format!("checkpoint_trial{i}.ckpt")))?;
                eprintln!("trial {i} seed {seed}: test {}={:.4}", data.metric().name(), t.test_metric);
                values.push(t.test_metric);
            }
            Err(e) => {
                eprintln!("trial {i} seed {seed} failed: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    if !values.is_empty() {
        let summary = Summary {
            dataset: ds.name.clone(),
            model: cfg.model.mode.to_string(),
            values,
        };
        summary.write_csv(&a.out.join("summary.csv"))?;
        print!("{}", summary.to_csv());
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn checkpoint_for(path: &Path, ds: &Dataset) -> Result<(Checkpoint, TaskData), Error> {
    let ck = Checkpoint::load(path)?;
    let data = TaskData::new(ds, 32)?;
    check_compatible(&data, ck.model.config())?;
    Ok((ck, data))
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let ds = load(&a.dataset)?;
    let (ck, data) = checkpoint_for(&a.checkpoint, &ds)?;
    let metric = data.metric();
    let value = evaluate(&ck.model, &data, a.split, metric)?;
    println!("{}={value:.4}", metric.name());
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    let ds = load(&a.dataset)?;
    let (ck, _) = checkpoint_for(&a.checkpoint, &ds)?;
    let batch = batch_graphs(&ds.graphs)?;
    let input = ModelInput::from_batch(&batch);
    let p = ck.model.predict(&input)?;
    let emb = p
        .embeddings
        .ok_or_else(|| Error::Config("model has no hidden layer to export".into()))?;
    // One label per node: its own class for node tasks, its graph's class
    // for graph tasks, and its graph index otherwise.
    let labels: Vec<u32> = match (ds.task(), batch.graph().labels()) {
        (Task::Node, Labels::Node(v)) => v.clone(),
        (Task::Graph, Labels::Graph(v)) => batch.node_graph().iter().map(|&g| v[g as usize]).collect(),
        _ => batch.node_graph().to_vec(),
    };
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    sgf::write_file(&a.out.join("embeddings.bin"), emb.rows(), emb.cols(), emb.data())?;
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    let path = a.out.join("labels.txt");
    fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    println!("embeddings={}x{}", emb.rows(), emb.cols());
    Ok(())
}

/// Smooth-mode defaults: one hidden layer and an output layer, two heads
/// each, a short window.
fn gradcheck_base() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.mode = Mode::SpikeFreeOracle;
    c.model.hidden_dims = vec![4];
    c.model.heads = vec![2];
    c.model.output_heads = 2;
    c.model.lif.time_steps = 2;
    c
}

fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let cfg = a.config.resolve(gradcheck_base())?;
    let (feat_dim, classes) = (5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let g = synthetic::random_graph(a.nodes, 0.2, feat_dim, classes, &mut rng);
    let model_cfg = ModelConfig::new(cfg.model.clone(), feat_dim, classes, Task::Node)?;
    let model = Model::<f64>::init_uniform(model_cfg, a.seed)?;
    let input = ModelInput::from_graph(&g);
    let targets: Arc<[u32]> = g.labels().classes().into();
    let rows: Arc<[u32]> = (0..a.nodes as u32).collect();
    let report = grad_check_model(&model, &input, targets, rows, a.h, a.tol, a.inject_bug)?;
    for p in &report.params {
        println!("{:<18} max_rel_err={:.3e} max_abs_err={:.3e}", p.name, p.max_rel_err, p.max_abs_err);
    }
    println!("max_rel_err={:.3e} tol={:e}", report.max_rel_err(), a.tol);
    if report.passed() {
        return Ok(());
    }
    let worst = report.worst().expect("a failed report has parameters");
    Err(Failure {
        code: 3,
        message: format!(
            "gradient check failed: {} entry {} has relative error {:.3e}",
            worst.name, worst.worst_entry, worst.max_rel_err
        ),
    })
}

fn info(a: InfoArgs) -> Result<(), Failure> {
    let ds = load(&a.dataset)?;
    let m = &ds.meta;
    let (train, val, test) = ds.splits.sizes();
    println!(
        "{:<12} {:>8} {:>8} {:>9} {:>8} {:>7} {:>9} {:>11} {:>6}",
        "Dataset", "Graphs", "Nodes", "Edges", "Features", "Classes", "Training", "Validation", "Test"
    );
    println!(
        "{:<12} {:>8} {:>8} {:>9} {:>8} {:>7} {:>9} {:>11} {:>6}",
        ds.name, m.num_graphs, m.num_nodes, m.num_edges, m.feat_dim, m.num_classes, train, val, test
    );
    println!("task={} processed_edges={}", m.task, ds.processed_edges());
    Ok(())
}
