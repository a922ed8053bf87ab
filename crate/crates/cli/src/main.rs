//! xrem: staged report retrieval and its evaluation tools.
//!
//! Subcommands: `retrieve` runs the pipeline over a query set, `mine`
//! generates the matching-task training dataset, `eval` scores
//! candidate/reference pairs, `human-eval` summarizes annotation files, and
//! `ablate` sweeps a parameter grid producing one CSV row per cell.

mod commands;
mod config;
mod pipeline;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use xrem_core::corpus::CorpusError;
use xrem_core::humaneval::HumanEvalError;
use xrem_core::metrics::MetricsError;
use xrem_core::mining::MiningError;
use xrem_core::retrieval::RetrievalError;
use xrem_core::scoring::ScoreError;

use config::{parse_filter, resolve, PipelineOverrides};

const DEFAULTS_HELP: &str = "\
Defaults: i = 50, j = i, k = 2, filter = nli, bertscore-threshold = 0.5,
seed = 42, workers = 1, out = ./out, composite coefficients (0, -1, -1).

The config file is a single JSON document with sections `corpus`, `queries`,
`scorers` (itm/nli/pair backend specs), `pipeline`, `radcliq`, `mining`,
`eval`, `humaneval`, and `ablation`; every knob a flag sets can also be set
there, and flags win. Relative paths in the config resolve against the config
file's directory.

Outputs land in --out: retrieve writes composed.jsonl and trace.jsonl; mine
writes dataset.jsonl; eval writes per_pair.jsonl and summary.csv; human-eval
writes ecdf.csv and paired.csv (plus assignments.jsonl with --assign); ablate
writes ablation.csv.";

#[derive(Parser)]
#[command(
    name = "xrem",
    version,
    about = "Staged report retrieval pipeline and evaluation tools",
    after_help = DEFAULTS_HELP
)]
struct Cli {
    /// JSON config file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for every randomized step
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Parallel workers for query processing
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the retrieval pipeline over the configured query set
    Retrieve(RetrieveArgs),
    /// Generate the matching-task training dataset from a labeled corpus
    Mine(MineArgs),
    /// Score candidate/reference pairs and aggregate per-metric means
    Eval(EvalArgs),
    /// Summarize annotation files: severity ECDF table and paired comparison
    HumanEval(HumanEvalArgs),
    /// Run the parameter grid, one CSV row per cell
    Ablate,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Stage-1 candidate count
    #[arg(long)]
    i: Option<usize>,
    /// Stage-2 candidate count (defaults to i)
    #[arg(long)]
    j: Option<usize>,
    /// Output batch capacity
    #[arg(long)]
    k: Option<usize>,
    /// Stage-3 filter: nli, bertscore, or none
    #[arg(long, value_name = "KIND")]
    filter: Option<String>,
    /// Acceptance threshold for the bertscore filter
    #[arg(long, value_name = "T")]
    bertscore_threshold: Option<f64>,
}

#[derive(Args)]
struct MineArgs {
    /// Negatives per image for each negative kind
    #[arg(long, value_name = "N")]
    negatives_per_image: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Explicit candidate/reference pairs (JSONL)
    #[arg(long, value_name = "PATH")]
    pairs: Option<PathBuf>,
    /// Composed-reports file from a retrieve run
    #[arg(long, value_name = "PATH")]
    composed: Option<PathBuf>,
    /// Trace file from the same retrieve run
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Reference texts and labels per study (JSONL)
    #[arg(long, value_name = "PATH")]
    references: Option<PathBuf>,
    /// Externally computed per-pair scores (JSONL)
    #[arg(long, value_name = "PATH")]
    external_scores: Option<PathBuf>,
}

#[derive(Args)]
struct HumanEvalArgs {
    /// Annotations file (JSONL)
    #[arg(long, value_name = "PATH")]
    annotations: Option<PathBuf>,
    /// Assign sources to the study ids in this file (one id per line)
    #[arg(long, value_name = "PATH")]
    assign: Option<PathBuf>,
}

/// Failure classes, each with a one-line diagnostic.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Backend(String),
}

impl CliError {
    pub fn config(msg: String) -> Self {
        CliError::Config(msg)
    }
    pub fn data(msg: String) -> Self {
        CliError::Data(msg)
    }
    pub fn backend(msg: String) -> Self {
        CliError::Backend(msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "error (config): {msg}"),
            CliError::Data(msg) => write!(f, "error (data): {msg}"),
            CliError::Backend(msg) => write!(f, "error (backend): {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::InvalidConfig(_) => CliError::Config(format!("mining: {e}")),
            other => CliError::Data(format!("mining: {other}")),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(format!("metrics: {e}"))
    }
}

impl From<HumanEvalError> for CliError {
    fn from(e: HumanEvalError) -> Self {
        match e {
            HumanEvalError::BadProbabilities(_) => CliError::Config(format!("human-eval: {e}")),
            other => CliError::Data(format!("human-eval: {other}")),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::InvalidConfig(_) => CliError::Config(e.to_string()),
            RetrievalError::Score(inner) => CliError::Backend(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = PipelineOverrides::default();
    if let Command::Retrieve(args) = &cli.command {
        overrides.i = args.i;
        overrides.j = args.j;
        overrides.k = args.k;
        overrides.filter = args.filter.as_deref().map(parse_filter).transpose()?;
        overrides.bertscore_threshold = args.bertscore_threshold;
    }
    let resolved = resolve(
        cli.config.as_deref(),
        cli.seed,
        cli.out,
        cli.workers,
        overrides,
    )?;
    match cli.command {
        Command::Retrieve(_) => commands::cmd_retrieve(&resolved),
        Command::Mine(args) => commands::cmd_mine(&resolved, args.negatives_per_image),
        Command::Eval(args) => commands::cmd_eval(
            &resolved,
            commands::EvalInputs {
                pairs: args.pairs,
                composed: args.composed,
                trace: args.trace,
                references: args.references,
                external_scores: args.external_scores,
            },
        ),
        Command::HumanEval(args) => {
            commands::cmd_human_eval(&resolved, args.annotations, args.assign)
        }
        Command::Ablate => commands::cmd_ablate(&resolved),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
