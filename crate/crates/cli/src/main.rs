//! `spinsqueeze`: batch front-end for squeezing, estimation and robustness
//! studies. Results go to CSV; with `--out` a reproducibility record
//! (configuration, hash and version) is written next to the CSV.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{read_file, Command, RunConfig, Settings};

#[derive(Parser)]
#[command(name = "spinsqueeze", version, about = "Collective-spin squeezing and adaptive phase estimation studies")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Squeezing parameter of multi-twist states over an N grid.
    Squeeze(Common),
    /// Estimation error of adaptive protocols over (N, sigma) grids.
    Estimate(Common),
    /// Particle-number, feedback-noise and contrast-loss studies.
    Robustness(Common),
    /// Power-law, sigmoid-exponential and kurtosis-sweep fits.
    Fit(Common),
    /// Closed-form predictions.
    Predict(Common),
    /// Husimi distribution of a prepared state on a sphere grid.
    Qdist(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file with settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only check the configuration.
    #[arg(long)]
    validate: bool,
    #[command(flatten)]
    settings: Settings,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Squeeze(c) => (Command::Squeeze, c),
        Sub::Estimate(c) => (Command::Estimate, c),
        Sub::Robustness(c) => (Command::Robustness, c),
        Sub::Fit(c) => (Command::Fit, c),
        Sub::Predict(c) => (Command::Predict, c),
        Sub::Qdist(c) => (Command::Qdist, c),
    };
    let (settings, file) = match &common.config {
        Some(path) => match read_file(path) {
            Ok((from_file, text)) => (from_file.overlaid(&common.settings), Some((path.clone(), text))),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => (common.settings, None),
    };
    let config = RunConfig { command, settings, file };
    let diagnostics = config.validate();
    if !diagnostics.is_empty() {
        for d in &diagnostics {
            eprintln!("error: {d}");
        }
        return ExitCode::from(2);
    }
    if common.validate {
        println!("configuration ok ({})", config.hash());
        return ExitCode::SUCCESS;
    }
    let result = spinsqueeze::par::with_threads(config.settings.threads, || commands::run(&config))
        .and_then(|table| output::emit(&config, &table));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
