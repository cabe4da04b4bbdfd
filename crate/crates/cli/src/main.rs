//! Command-line surface of the contextual embedding pipeline.
//!
//! Exit codes are a stable contract: 0 success, 1 usage, 2 parse or
//! validation failure, 3 numeric abort. Log verbosity is controlled by the
//! `RUST_LOG` environment variable.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ctxppi",
    version,
    about = "Cell-type-contextual protein network embeddings",
    long_about = "Builds cell-type-specific protein subnetworks from expression data, trains \
                  multi-scale graph attention embeddings of proteins, cell types, and tissues, \
                  and evaluates them on context-specific association prediction."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate planted synthetic input files with known ground truth.
    Synth(SynthArgs),
    /// Construct and validate a multi-scale network bundle from input files.
    Build(BuildArgs),
    /// Train embeddings from a network bundle.
    Train(TrainArgs),
    /// Evaluate an embeddings file against association labels.
    Eval(EvalArgs),
    /// Project an embeddings file to 2-D coordinates.
    Project(ProjectArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator spec file (key = value lines); defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory the input files are written into.
    #[arg(long, default_value = "synth")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct BuildArgs {
    /// Protein edge list (two tab-separated symbols per line).
    #[arg(long)]
    pub ppi: PathBuf,
    /// Cluster-by-gene mean expression table.
    #[arg(long)]
    pub expression: PathBuf,
    /// Meta graph of cell-type and tissue nodes.
    #[arg(long)]
    pub metagraph: PathBuf,
    /// Top differentially expressed genes seeding each subnetwork.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Growth budget before extraction falls back to bridging.
    #[arg(long, default_value_t = 100)]
    pub n_max: usize,
    /// Output bundle path.
    #[arg(long, default_value = "network.bundle.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Network bundle produced by `build`.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Training configuration file (key = value lines); defaults when
    /// omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation mode override: full, global, no_mg, or no_proto.
    #[arg(long)]
    pub ablation: Option<String>,
    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for params, embeddings, history, and the run manifest.
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Embeddings file written by `train`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Label triples (gene, cell type, disease).
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated neighbor counts for the Micro-F1 table.
    #[arg(long, default_value = "1,5,10")]
    pub ks: String,
    /// Independent split/evaluation runs.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Split seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Neighbor count for the per-label recall rankings (first of --ks when
    /// omitted).
    #[arg(long)]
    pub recall_k: Option<usize>,
    #[arg(long, default_value = "eval")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct ProjectArgs {
    /// Embeddings file written by `train`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Output coordinates file.
    #[arg(long, default_value = "coordinates.tsv")]
    pub out: PathBuf,
}

/// Failure classes mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Parse or validation failure (exit 2).
    Input(String),
    /// Non-finite numerics during training (exit 3).
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version output are successes, not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::run_synth(&args),
        Command::Build(args) => commands::run_build(&args),
        Command::Train(args) => commands::run_train(&args),
        Command::Eval(args) => commands::run_eval(&args),
        Command::Project(args) => commands::run_project(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(3)
        }
    }
}
