//! `resp`: training, explanation, evaluation and experiments from one config.
//!
//! Exit status: 0 on success, 2 for an invalid configuration, 3 for a
//! failure while running.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{RunConfig, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "resp", version, about = "Responsibility ledgers for example-based explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Train a model and save it with its ledger.
    Train(Args),
    /// Explain one test example with a saved model and ledger.
    Explain(Args),
    /// Actor/evaluator comparison of explanation conditions.
    Eval(Args),
    /// Mislabel search by responsibility versus random order.
    DebugData(Args),
    /// Class-by-neuron responsibility matrix of the final layer.
    Interclass(Args),
    /// Distribution of signed final-layer responsibility values.
    Stats(Args),
    /// Ranked example lists per output neuron across training seeds.
    Seeds(Args),
    /// Shared most responsible examples among misclassifications.
    Misclass(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// TOML file with the run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunConfig,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn from_core(step: &str, err: responsibility::Error) -> Self {
        match err {
            responsibility::Error::InvalidConfig { .. } => CliError::Config(format!("{step}: {err}")),
            _ => CliError::Runtime(format!("{step}: {err}")),
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn run(cmd: Subcommand, args: Args) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let config = file.overlay(&args.overrides)?.with_defaults(cmd);
    config.validate(cmd)?;
    let manifest = commands::run(cmd, &config).map_err(|e| match e {
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", cmd.name())),
        other => other,
    })?;
    let root = config.output_root(cmd);
    for f in &manifest.files {
        println!("{}  {}", f.sha256, root.join(&f.path).display());
    }
    println!("{}", root.join(responsibility::experiments::MANIFEST_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Command::Train(a) => (Subcommand::Train, a),
        Command::Explain(a) => (Subcommand::Explain, a),
        Command::Eval(a) => (Subcommand::Eval, a),
        Command::DebugData(a) => (Subcommand::DebugData, a),
        Command::Interclass(a) => (Subcommand::Interclass, a),
        Command::Stats(a) => (Subcommand::Stats, a),
        Command::Seeds(a) => (Subcommand::Seeds, a),
        Command::Misclass(a) => (Subcommand::Misclass, a),
    };
    match run(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("resp {}: {e}", cmd.name());
            ExitCode::from(e.code())
        }
    }
}
