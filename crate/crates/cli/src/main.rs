//! `satdev`: one entry point for world synthesis, census ETL, training,
//! transfer, spatial analysis and the econometric case study.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{analyze, aggregate, econ, synth, train, transfer};
use crate::config::Resolver;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "satdev", version, about = "Socio-economic indicators from synthetic satellite imagery")]
struct Cli {
    /// Top-level seed; every component derives its own stream from it [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` file, or a manifest.json from an earlier run
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted synthetic world: images, census, night lights, districts
    Synth(synth::Args),
    /// Aggregate census columns into asset indicators and flag outliers
    Aggregate(aggregate::Args),
    /// Train the image regressor (direct assets or night lights)
    Train(train::Args),
    /// Cross-validate district-level transfer heads per indicator
    Transfer(transfer::Args),
    /// Occlusion heatmap, edge alerts, temporal replay and choropleths
    Analyze(analyze::Args),
    /// Nested OLS table, Monte Carlo sampling, KDE and power analysis
    Econ(econ::Args),
}

pub struct Globals {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Aggregate(_) => "aggregate",
        Command::Train(_) => "train",
        Command::Transfer(_) => "transfer",
        Command::Analyze(_) => "analyze",
        Command::Econ(_) => "econ",
    };
    let file = match &cli.config {
        Some(path) => config::load(path, name)?,
        None => Default::default(),
    };
    let resolver = Resolver::new(file);
    let globals = Globals {
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Synth(a) => synth::run(a, globals, resolver),
        Command::Aggregate(a) => aggregate::run(a, globals, resolver),
        Command::Train(a) => train::run(a, globals, resolver),
        Command::Transfer(a) => transfer::run(a, globals, resolver),
        Command::Analyze(a) => analyze::run(a, globals, resolver),
        Command::Econ(a) => econ::run(a, globals, resolver),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            eprintln!("{}", CliError::usage(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
