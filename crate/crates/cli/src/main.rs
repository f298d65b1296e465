//! `pacc`: sample sizes, data generation, estimation, decisions and
//! Monte Carlo verification from JSON configs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pacc_core::PaccError;

#[derive(Parser, Debug)]
#[command(name = "pacc", version, about = "Probably approximately correct causal discovery toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's `master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads for trial execution.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Export the hidden confounder of IV records.
    #[arg(long, global = true)]
    pub include_hidden: bool,
    /// Override a config field, e.g. `--set concept.delta=2`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the sample-size bound and its components.
    Samplesize(commands::SampleSizeArgs),
    /// Draw a dataset from a generator.
    Generate,
    /// Fit the method's estimator to a dataset.
    Estimate(commands::DataArgs),
    /// Apply the method's decision rule to a dataset.
    Decide(commands::DataArgs),
    /// Certify the error rate of one trial spec.
    Verify,
    /// Verify a base spec over a grid of generators.
    Sweep,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(PaccError),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(PaccError::InvalidArgument(_) | PaccError::GridRejected(_)) => 2,
            CliError::Run(_) => 3,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Run(e) => (e.kind(), e.to_string()),
        };
        let mut v = serde_json::json!({ "error": kind, "message": message });
        if let CliError::Run(PaccError::GridRejected(points)) = self {
            v["points"] = serde_json::json!(points);
        }
        v
    }
}

impl From<PaccError> for CliError {
    fn from(e: PaccError) -> Self {
        CliError::Run(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(pass) => ExitCode::from(if pass { 0 } else { 1 }),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
