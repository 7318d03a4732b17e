//! `countflow`: config-driven pipeline for count-space flow matching.
//!
//! Subcommands: `gen-data`, `train`, `sample`, `transport`, `eval`,
//! `bridge-viz`. Each takes a JSON config (`--config`), runs
//! deterministically for a given seed, and writes its outputs plus a
//! resolved-config copy into the configured output directory.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime/numerical
//! abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn from_core(e: countflow::Error) -> Self {
        match e {
            countflow::Error::TrainingAborted { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "countflow",
    version,
    about = "Count-space flow matching: generate, train, sample, transport, evaluate"
)]
struct Cli {
    /// Cap the worker thread count (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic source/target count data.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a rate network on a source/target pair.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample from a trained model, starting from the source spec.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Record and write the full sampling trajectories.
        #[arg(long)]
        trajectories: bool,
        /// Guidance scale w (overrides the config value).
        #[arg(long)]
        guidance: Option<f64>,
    },
    /// Transport the rows of an input file through the learned process.
    Transport {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        trajectories: bool,
        #[arg(long)]
        guidance: Option<f64>,
    },
    /// Two-sample metrics between a generated file and a reference file.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Export bridge-marginal heatmaps.
    BridgeViz {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::GenData { .. } => "gen-data",
        Command::Train { .. } => "train",
        Command::Sample { .. } => "sample",
        Command::Transport { .. } => "transport",
        Command::Eval { .. } => "eval",
        Command::BridgeViz { .. } => "bridge-viz",
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let name = command_name(&cli.command);
    let common = match &cli.command {
        Command::GenData { common }
        | Command::Train { common }
        | Command::Eval { common }
        | Command::BridgeViz { common } => common,
        Command::Sample { common, .. } | Command::Transport { common, .. } => common,
    };
    let config = commands::load_config(common.config.as_ref())?;
    if common.print_config {
        return commands::print_config(&config, name);
    }
    match cli.command {
        Command::GenData { .. } => commands::cmd_gen_data(config),
        Command::Train { .. } => commands::cmd_train(config),
        Command::Sample {
            trajectories,
            guidance,
            ..
        } => commands::cmd_sample(config, false, trajectories, guidance),
        Command::Transport {
            trajectories,
            guidance,
            ..
        } => commands::cmd_sample(config, true, trajectories, guidance),
        Command::Eval { .. } => commands::cmd_eval(config),
        Command::BridgeViz { .. } => commands::cmd_bridge_viz(config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
