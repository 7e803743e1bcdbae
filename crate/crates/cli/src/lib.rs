//! Command-line driver: synthetic data generation, training, evaluation and
//! hidden-state analysis, each writing into its own output directory.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_EMPTY: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn empty(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_EMPTY,
            message: message.into(),
        }
    }
}

impl From<mtlqa::Error> for CliError {
    fn from(e: mtlqa::Error) -> Self {
        use mtlqa::Error as E;
        let code = match e {
            E::Config { .. } | E::Validation { .. } | E::Parse { .. } | E::Checkpoint(_) | E::Io(_) | E::Json(_) => {
                EXIT_CONFIG
            }
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        mtlqa::Error::Io(e).into()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mtlqa", version, about = "Multi-task span-selection QA at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus split into train/dev/test JSONL files.
    GenData(GenDataArgs),
    /// Train a model (single-task, multi-task, adversarial or sequential).
    Train(TrainArgs),
    /// Evaluate a trained run with overall and grouped EM/F1.
    Eval(EvalArgs),
    /// Capture hidden states and run the answer-span cosine analysis.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $MTLQA_OUT/data].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// subjqa-like, squad-like or combined.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of review domains (at most 6).
    #[arg(long)]
    pub domains: Option<usize>,
    #[arg(long)]
    pub n_per_domain: Option<usize>,
    #[arg(long)]
    pub answerable_rate: Option<f64>,
    /// Number of encyclopedic examples.
    #[arg(long)]
    pub squad_like: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory [default: data.dir or $MTLQA_OUT/data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory [default: $MTLQA_OUT/train].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated tasks among qa, sbj, dom, dataset.
    #[arg(long)]
    pub tasks: Option<String>,
    /// uniform or oversampling.
    #[arg(long)]
    pub sampler: Option<String>,
    /// none, simple or grl.
    #[arg(long)]
    pub adversarial: Option<String>,
    #[arg(long)]
    pub grl_lambda: Option<f64>,
    /// identity, bilstm or highway.
    #[arg(long)]
    pub post: Option<String>,
    /// joint or sequential.
    #[arg(long)]
    pub mode: Option<String>,
    /// soft or oracle (sequential mode).
    #[arg(long)]
    pub targets: Option<String>,
    /// qc or qa input pairs for the subjectivity heads.
    #[arg(long)]
    pub sbj_input: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Seeds both parameter initialisation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub no_early_stopping: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, dev or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Grouping keys: domain, interrogative, subjectivity (repeatable).
    #[arg(long, value_delimiter = ',')]
    pub group_by: Vec<String>,
    /// Output directory [default: <run>/eval-<split>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Retained PCA variance.
    #[arg(long)]
    pub variance: Option<f64>,
    /// [CLS] projection label: subjectivity3way, domain or domain_subjectivity.
    #[arg(long)]
    pub projection: Option<String>,
    /// pooled or welch.
    #[arg(long)]
    pub ttest: Option<String>,
    #[arg(long)]
    pub tsne_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Analyse only the first N examples of the split.
    #[arg(long)]
    pub max_examples: Option<usize>,
    /// Output directory [default: <run>/analysis-<split>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Analyze(a) => commands::analyze(&a),
    }
}
