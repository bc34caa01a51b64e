//! `camd` — compressed anomaly detection from mixed MMV observations.
//!
//! Subcommands: `generate` (synthetic data dumps), `detect` (run one
//! detector on dumped data), `phase` (Jeffreys-stopped phase-transition
//! grids with CSV + heatmap output), `theory` (closed-form score
//! expectations and the separation hypothesis).

mod commands;
mod heatmap;
mod io;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit codes: 0 success, 1 config/usage, 2 runtime detection error, 3 I/O.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Detection(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Detection(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Detection(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<camd::Error> for CliError {
    fn from(e: camd::Error) -> Self {
        match e {
            camd::Error::Config(_) | camd::Error::Domain(_) => CliError::Config(e.to_string()),
            _ => CliError::Detection(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "camd",
    version,
    about = "Anomaly detection from compressed mixed observations"
)]
struct Cli {
    /// Base seed for all randomness (overrides any seed in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread cap for grid runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    /// Path to the JSON config document (commands that need one).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate signals, sensing matrices, and measurements as CSV dumps.
    Generate,
    /// Run one detector on dumped data and print the estimated anomaly set.
    Detect(commands::DetectArgs),
    /// Run a phase-transition grid: per-K results CSV plus heatmap PNGs.
    Phase,
    /// Print the closed-form score expectations and the separation verdict.
    Theory(commands::TheoryArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let result = match &cli.command {
        Command::Generate => commands::generate(&cli.output_dir, cli.config.as_deref(), cli.seed),
        Command::Detect(args) => commands::detect(args, cli.seed),
        Command::Phase => commands::phase(
            &cli.output_dir,
            cli.config.as_deref(),
            cli.seed,
            cli.threads,
        ),
        Command::Theory(args) => commands::theory(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
