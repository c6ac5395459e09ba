//! `bnbcp`: fit, score, generate, and inspect BNBCP tensor factorizations.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bnbcp::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Labels(String),
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
    #[error("serializing: {0}")]
    Json(#[from] serde_json::Error),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "bnbcp", version, about = "Beta-negative-binomial CP factorization of sparse count tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model with one of the four engines.
    Fit(FitArgs),
    /// Score a saved model on a tensor; prints JSON.
    Eval(EvalArgs),
    /// Generate a tensor from the model with a planted number of components.
    Synth(SynthArgs),
    /// List the top entities of each component for one mode.
    Topics(TopicsArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gibbs,
    Vb,
    Cdf,
    Svi,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportSample {
    Mean,
    Last,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Printed,
    MeanField,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingArg {
    Replacement,
    Epoch,
}

/// Prior hyperparameters; unset values fall back to the defaults for the rank.
#[derive(Args, Debug, Clone, Serialize)]
pub struct PriorArgs {
    /// Dirichlet concentration: one value for all modes or one per mode.
    #[arg(long, value_delimiter = ',')]
    pub a: Option<Vec<f64>>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Upper bound R on the number of components.
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    /// Gibbs collection sweeps.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Maximum VB iterations or number of online steps.
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub minibatch: usize,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub kappa: f64,
    /// Fraction of stored entries held out for scoring; 0 trains on everything.
    #[arg(long, default_value_t = 0.1)]
    pub heldout_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Evaluation period; defaults to 1 for vb and 10 otherwise.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub rank_threshold: f64,
    /// Gibbs export: posterior mean or final sample.
    #[arg(long, value_enum, default_value_t = ExportSample::Mean)]
    pub export_sample: ExportSample,
    #[arg(long)]
    pub sum_duplicates: bool,
    /// VB plateau tolerance on the relative heldout log-likelihood change.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Allocation rule for vb and svi.
    #[arg(long, value_enum, default_value_t = Rule::Printed)]
    pub vb_rule: Rule,
    /// svi: blend the λ rate from the previous λ shape.
    #[arg(long)]
    pub strict_lambda_rate: bool,
    #[arg(long, value_enum, default_value_t = SamplingArg::Replacement)]
    pub sampling: SamplingArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory holding mode_k.csv, lambda.csv, p.csv.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub rank_threshold: f64,
    #[arg(long)]
    pub sum_duplicates: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub rank: usize,
    #[arg(long)]
    pub significant: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000.0)]
    pub lambda_scale: f64,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Allow shapes above the enumeration cap.
    #[arg(long)]
    pub blockwise: bool,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TopicsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub mode: usize,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// One label per line; line j labels index j.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Components with λ at or below this fraction of the largest are skipped.
    #[arg(long, default_value_t = 0.01)]
    pub rank_threshold: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Topics(args) => commands::topics(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bnbcp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
