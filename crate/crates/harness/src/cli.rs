//! The `incindex` command line.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 when the inputs are
//! well-formed arguments but the data is not usable.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use incindex_core::store::{self, Split};
use incindex_core::tuner::{self, TuneConfig};
use incindex_core::{
    add_document, evaluate_split, top_k, Hyperparams, IndexState, LossVariant, OptimizerConfig,
};

use crate::bootstrap::{bootstrap, BootstrapMode, LinearHeadConfig};
use crate::dataset::QuerySet;
use crate::serve::{serve, Service};
use crate::stream::{run_stream, write_checkpoint_csv, StreamEval};
use crate::synthetic::{self, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "incindex", version, about = "Incremental document-vector index")]
struct Cli {
    /// Index snapshot read (and, for `init` and `add`, written) by the command.
    #[arg(long, global = true)]
    snapshot: Option<PathBuf>,
    /// Base seed for initialization, tuning and data generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with lambda1, lambda2, gamma1, gamma2 and loss_variant;
    /// overrides the hyperparameters stored in the snapshot.
    #[arg(long, global = true)]
    hyperparams: Option<PathBuf>,
    /// JSON file with optimizer settings; missing fields keep their defaults.
    #[arg(long, global = true)]
    optimizer: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (initial, new and tune parts).
    Gen(GenArgs),
    /// Build an index from documents' training queries.
    Init(InitArgs),
    /// Add one document; every row of the embedding file is one of its queries.
    Add(AddArgs),
    /// Rank documents for every row of a query file (one JSON line per query).
    Search(SearchArgs),
    /// Score labeled queries and print the metrics report.
    Eval(EvalArgs),
    /// Random-search the hyperparameters on tuning documents.
    Tune(TuneArgs),
    /// Add documents in order and write checkpoint metrics as CSV.
    Stream(StreamArgs),
    /// Export or import snapshots.
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
    /// Serve the index over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_docs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    queries_per_doc: Option<usize>,
    #[arg(long)]
    cluster_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    ClassMean,
    LinearHead,
}

#[derive(Debug, Args)]
struct QueryFiles {
    /// Embedding file.
    #[arg(long)]
    embeddings: PathBuf,
    /// Query manifest (TSV) for the embedding file.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[command(flatten)]
    files: QueryFiles,
    #[arg(long, value_enum, default_value_t = Mode::ClassMean)]
    mode: Mode,
}

#[derive(Debug, Args)]
struct AddArgs {
    #[arg(long)]
    doc_id: String,
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    files: QueryFiles,
    /// Manifest splits to score, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "val")]
    split: Vec<String>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    /// Embeddings of the tuning documents' queries.
    #[arg(long)]
    tune_embeddings: PathBuf,
    #[arg(long)]
    tune_manifest: PathBuf,
    /// Embeddings of held-out queries for the indexed documents.
    #[arg(long)]
    orig_embeddings: PathBuf,
    #[arg(long)]
    orig_manifest: PathBuf,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 5.0)]
    beta: f64,
    #[arg(long, default_value = "squared_hinge")]
    loss_variant: String,
    /// Trial log (CSV); standard output when omitted.
    #[arg(long)]
    trials_out: Option<PathBuf>,
    /// Best hyperparameters (JSON); standard error when omitted.
    #[arg(long)]
    best_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StreamArgs {
    /// Embeddings of the streamed documents' queries.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Embeddings of held-out queries for the indexed documents.
    #[arg(long)]
    orig_embeddings: PathBuf,
    #[arg(long)]
    orig_manifest: PathBuf,
    /// Cumulative document counts to evaluate at, e.g. `10,100`.
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<usize>,
    /// Checkpoint CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the final index here.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SnapshotCommand {
    /// Copy the index at --snapshot to another path after validating it.
    Save {
        #[arg(long)]
        to: PathBuf,
    },
    /// Validate a snapshot file and install it at --snapshot.
    Load {
        #[arg(long)]
        from: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl From<incindex_core::Error> for Failure {
    fn from(e: incindex_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    eprintln!();
                    let _ = Cli::command().write_long_help(&mut io::stderr());
                    1
                }
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            let _ = Cli::command().write_help(&mut io::stderr());
            1
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn execute(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Init(a) => init(cli, a),
        Command::Add(a) => add(cli, a),
        Command::Search(a) => search(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Tune(a) => tune(cli, a),
        Command::Stream(a) => stream(cli, a),
        Command::Snapshot(SnapshotCommand::Save { to }) => {
            let (state, hp) = load(cli)?;
            store::save_snapshot(&state, &hp, to)?;
            print_json(&stats_json(&state, &hp))
        }
        Command::Snapshot(SnapshotCommand::Load { from }) => {
            let target = snapshot_path(cli)?;
            let (state, hp) = store::load_snapshot(from)?;
            store::save_snapshot(&state, &hp, target)?;
            print_json(&stats_json(&state, &hp))
        }
        Command::Serve(a) => serve_cmd(cli, a),
    }
}

fn snapshot_path(cli: &Cli) -> Result<&Path, Failure> {
    cli.snapshot
        .as_deref()
        .ok_or_else(|| Failure::Usage("this command needs --snapshot".into()))
}

fn load(cli: &Cli) -> Result<(IndexState, Hyperparams), Failure> {
    Ok(store::load_snapshot(snapshot_path(cli)?)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// The --hyperparams file wins over the snapshot's stored values.
fn hyperparams(cli: &Cli, stored: Option<Hyperparams>) -> Result<Hyperparams, Failure> {
    let hp = match &cli.hyperparams {
        Some(path) => read_json(path)?,
        None => stored.unwrap_or_default(),
    };
    hp.validate()?;
    Ok(hp)
}

fn optimizer(cli: &Cli) -> Result<OptimizerConfig, Failure> {
    let cfg: OptimizerConfig = match &cli.optimizer {
        Some(path) => read_json(path)?,
        None => OptimizerConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) -> Outcome {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Data(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn stats_json(state: &IndexState, hp: &Hyperparams) -> serde_json::Value {
    json!({
        "num_docs": state.len(),
        "n0": state.n0(),
        "dim": state.dim(),
        "hyperparams": hp,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_splits(names: &[String]) -> Result<Vec<Split>, Failure> {
    names
        .iter()
        .map(|s| s.parse::<Split>().map_err(|e| Failure::Usage(e.to_string())))
        .collect()
}

fn gen(cli: &Cli, a: &GenArgs) -> Outcome {
    let mut spec: SyntheticSpec = match &a.config {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::default(),
    };
    spec.seed = cli.seed;
    if let Some(n) = a.n_docs {
        spec.n_docs = n;
    }
    if let Some(h) = a.dim {
        spec.dim = h;
    }
    if let Some(k) = a.queries_per_doc {
        spec.queries_per_doc = k;
    }
    if let Some(s) = a.cluster_std {
        spec.cluster_std = s;
    }
    let corpus = synthetic::generate(&spec)?;
    synthetic::write_corpus(&corpus, &a.out)?;
    print_json(&json!({
        "initial": corpus.initial.len(),
        "new": corpus.new.len(),
        "tune": corpus.tune.len(),
        "dim": corpus.dim,
    }))
}

fn init(cli: &Cli, a: &InitArgs) -> Outcome {
    let target = snapshot_path(cli)?;
    let hp = hyperparams(cli, None)?;
    let set = QuerySet::load(&a.files.embeddings, &a.files.manifest)?;
    let mode = match a.mode {
        Mode::ClassMean => BootstrapMode::ClassMean,
        Mode::LinearHead => BootstrapMode::LinearHead(LinearHeadConfig {
            seed: cli.seed,
            ..Default::default()
        }),
    };
    let state = bootstrap(&set.documents(Split::Train)?, set.dim(), mode)?;
    store::save_snapshot(&state, &hp, target)?;
    print_json(&stats_json(&state, &hp))
}

fn add(cli: &Cli, a: &AddArgs) -> Outcome {
    let (mut state, stored) = load(cli)?;
    let hp = hyperparams(cli, Some(stored))?;
    let cfg = optimizer(cli)?;
    let queries = store::read_embedding_matrix(&a.embeddings)?;
    let rows: Vec<&[f32]> = queries.iter_rows().collect();
    let report = add_document(&mut state, &a.doc_id, &rows, &hp, &cfg, cli.seed)?;
    store::save_snapshot(&state, &stored, snapshot_path(cli)?)?;
    print_json(&serde_json::to_value(&report).map_err(|e| Failure::Data(e.to_string()))?)
}

fn search(cli: &Cli, a: &SearchArgs) -> Outcome {
    let (state, _) = load(cli)?;
    let queries = store::read_embedding_matrix(&a.embeddings)?;
    let mut out = io::stdout().lock();
    for (i, q) in queries.iter_rows().enumerate() {
        let ranked = top_k(&state, q, a.k)?;
        let results: Vec<_> = ranked
            .entries
            .iter()
            .map(|h| json!({ "doc_id": &*h.doc.id, "score": h.score }))
            .collect();
        writeln!(out, "{}", json!({ "query": i, "results": results }))?;
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Outcome {
    let (state, _) = load(cli)?;
    let splits = parse_splits(&a.split)?;
    let set = QuerySet::load(&a.files.embeddings, &a.files.manifest)?;
    let report = evaluate_split(&state, &set.labeled(&splits))?;
    print_json(&serde_json::to_value(report).map_err(|e| Failure::Data(e.to_string()))?)
}

fn tune(cli: &Cli, a: &TuneArgs) -> Outcome {
    let (state, _) = load(cli)?;
    let loss_variant: LossVariant = a
        .loss_variant
        .parse()
        .map_err(|e: incindex_core::Error| Failure::Usage(e.to_string()))?;
    let tune_set = QuerySet::load(&a.tune_embeddings, &a.tune_manifest)?;
    let orig_set = QuerySet::load(&a.orig_embeddings, &a.orig_manifest)?;
    let cfg = TuneConfig {
        trials: a.trials,
        beta: a.beta,
        seed: cli.seed,
        loss_variant,
        optimizer: optimizer(cli)?,
        ..Default::default()
    };
    let outcome = tuner::tune(
        &state,
        &tune_set.documents(Split::Train)?,
        &orig_set.labeled(&[Split::Val]),
        &tune_set.labeled(&[Split::Val]),
        &cfg,
    )?;
    let mut trials = output(a.trials_out.as_deref())?;
    tuner::write_trial_csv(&outcome.trials, &mut trials)?;
    trials.flush()?;
    let best = serde_json::to_string_pretty(&outcome.best).map_err(|e| Failure::Data(e.to_string()))?;
    match &a.best_out {
        Some(path) => std::fs::write(path, best + "\n")?,
        None => eprintln!("{best}"),
    }
    Ok(())
}

fn stream(cli: &Cli, a: &StreamArgs) -> Outcome {
    let (mut state, stored) = load(cli)?;
    let hp = hyperparams(cli, Some(stored))?;
    let cfg = optimizer(cli)?;
    let new_set = QuerySet::load(&a.embeddings, &a.manifest)?;
    let orig_set = QuerySet::load(&a.orig_embeddings, &a.orig_manifest)?;
    let eval = StreamEval {
        original: orig_set.labeled(&[Split::Val]),
        new: new_set.labeled(&[Split::Val]),
    };
    let docs = new_set.documents(Split::Train)?;
    let outcome = run_stream(&mut state, &docs, &a.checkpoints, &hp, &cfg, cli.seed, &eval)?;
    let mut out = output(a.out.as_deref())?;
    write_checkpoint_csv(&outcome.rows, &mut out)?;
    out.flush()?;
    if let Some(path) = &a.save {
        store::save_snapshot(&state, &stored, path)?;
    }
    Ok(())
}

fn serve_cmd(cli: &Cli, a: &ServeArgs) -> Outcome {
    let (state, stored) = load(cli)?;
    let hp = hyperparams(cli, Some(stored))?;
    let svc = Arc::new(Service::new(state, hp, optimizer(cli)?, cli.seed));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(serve(svc, a.bind))?;
    Ok(())
}
