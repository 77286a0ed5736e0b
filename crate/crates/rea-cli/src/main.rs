//! `rea` — retrieval-enhanced property valuation from the command line.
//!
//! Grammar: `rea <gen-synth|split|train|eval|sweep|predict>
//! --config <file> [--set key=value ...]`. Exit codes: 0 success,
//! 1 validation error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::OutDirLock;

#[derive(Debug)]
pub enum CliError {
    /// Bad inputs: config, files, schemas, arguments. Exit code 1.
    Validation(String),
    /// Failures after validation passed. Exit code 2.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "rea",
    about = "Retrieval-enhanced property valuation: learned comparable selection trained jointly with the price model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override any config field, e.g. --set train.epochs=5
    /// or --set sweep.seeds=[0,1,2].
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV plus its latent-coefficient sidecar.
    GenSynth(CommonArgs),
    /// Partition the dataset (temporal or random) into a split JSON.
    Split(CommonArgs),
    /// Train and write checkpoints plus a JSONL log.
    Train(CommonArgs),
    /// Score a partition with a trained checkpoint.
    Eval(CommonArgs),
    /// Retrieval-policy sweep; optionally the baseline comparison report.
    Sweep(CommonArgs),
    /// Price one property and explain its comparables.
    Predict(CommonArgs),
}

type CommandFn = fn(&config::RunConfig) -> Result<(), CliError>;

fn run(command: Command) -> Result<(), CliError> {
    let (args, f): (&CommonArgs, CommandFn) = match &command {
        Command::GenSynth(a) => (a, commands::cmd_gen_synth),
        Command::Split(a) => (a, commands::cmd_split),
        Command::Train(a) => (a, commands::cmd_train),
        Command::Eval(a) => (a, commands::cmd_eval),
        Command::Sweep(a) => (a, commands::cmd_sweep),
        Command::Predict(a) => (a, commands::cmd_predict),
    };
    let config = config::load_config(&args.config, &args.set)?;
    let _lock = OutDirLock::acquire(&config.out_dir)?;
    f(&config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version print and succeed; usage mistakes are
            // validation errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
