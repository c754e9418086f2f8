//! `ganem` experiment runner: `run`, `check`, `evaluate`, `verify-theory`
//! and `list-datasets`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Overrides the directory that relative `output_dir` values live under.
pub const OUTPUT_ROOT_ENV: &str = "GANEM_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "ganem", version, about = "EM clustering with a conditional GAN and an inverse E-net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Validates a config and loads its dataset without training.
    Check { config: PathBuf },
    /// Scores a saved E-net on a dataset described by a TOML file with a
    /// `[dataset]` table (a run config works too).
    Evaluate {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Where to write scores.json; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks the closed-form discriminator, the divergence identity and the
    /// prior update on random discrete instances.
    VerifyTheory {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Lists the built-in dataset generators.
    ListDatasets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => commands::run(&config),
        Command::Check { config } => commands::check(&config),
        Command::Evaluate { checkpoint, dataset, out } => commands::evaluate(&checkpoint, &dataset, out.as_deref()),
        Command::VerifyTheory { trials, seed } => commands::verify_theory(trials, seed),
        Command::ListDatasets => {
            commands::list_datasets();
            Ok(commands::Outcome::Success)
        }
    };
    match outcome {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<config::ConfigError>() { 2 } else { 1 })
        }
    }
}
