//! `fednmf` binds the pipeline: prepare a corpus, partition it across
//! simulated clients, train the federated topic model, and evaluate the
//! result. Every command is non-interactive, exits nonzero on any error,
//! and takes everything through flags and config files so runs reproduce.

mod commands;
mod config;
mod features;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "fednmf", version, about = "Federated NMF topic modeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a `label<TAB>text` corpus into a count-matrix bundle.
    Prepare(PrepareArgs),
    /// Split a prepared bundle into per-client shards.
    Partition(PartitionArgs),
    /// Run federated training from a config file.
    Train(TrainArgs),
    /// Score a trained model: topic coherence and/or classification.
    Eval(EvalArgs),
    /// Run a grid of training cells and tabulate their metrics.
    Sweep(SweepArgs),
}

#[derive(clap::Args)]
struct PrepareArgs {
    /// Corpus file, one `label<TAB>text` document per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Stopword file, one token per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Keep tokens occurring at least this often.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Output directory for the bundle.
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write train/ and test/ sub-bundles with this train fraction.
    #[arg(long)]
    split: Option<f64>,
    /// Seed for the split shuffle.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
struct PartitionArgs {
    /// Prepared bundle directory.
    #[arg(long)]
    matrix: PathBuf,
    /// Client count K.
    #[arg(long)]
    clients: usize,
    /// Dirichlet concentration; small values give skewed clients.
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Shard manifest output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Run config (TOML); see the README for the key set.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (checkpoints, metrics, features, manifest).
    #[arg(long)]
    out_dir: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel client updates.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write an intermediate factor checkpoint every this many rounds.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Coherence,
    Classify,
    Both,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Factor checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file of the bundle the model was trained on.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum)]
    mode: EvalMode,
    /// Word-embedding file (`word v1 ... vd` per line); coherence modes only.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Topic-weight features written by `train`; default classification input.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Bundle directory to fold in instead of using trained features.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Infer features for the bundle named by --matrix with the checkpoint
    /// held fixed.
    #[arg(long, default_value_t = false)]
    fold_in: bool,
    /// Top words per topic for coherence.
    #[arg(long, default_value_t = 10)]
    top_words: usize,
    /// Train fraction of the classifier split.
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Classifier training epochs.
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Classifier learning rate.
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Fold-in gradient iterations.
    #[arg(long, default_value_t = 500)]
    fold_in_iters: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// Sweep config (TOML): a base cell plus per-axis value lists.
    #[arg(long)]
    grid: PathBuf,
    /// Output table (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Run cells on this many parallel workers (cells stay deterministic).
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Worker threads inside each cell.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => commands::prepare(args),
        Command::Partition(args) => commands::partition(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
