mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invekf::Variant;

#[derive(Parser, Debug)]
#[command(name = "invekf", version, about = "Invariant-error EKF SLAM campaigns, replays and audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run both filters on one simulated run and write trajectories and maps.
    Simulate(Common),
    /// Monte-Carlo campaign: NEES, RMSE, summary and audit tables.
    Benchmark(Common),
    /// Replay MRCLAM-layout datasets (or the synthetic suite) with every filter.
    Utias(Common),
    /// Kernel and information audits on fresh short runs of every model.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Shift the heading column of every observation Jacobian by this much.
        #[arg(long, value_name = "OFFSET")]
        inject_fault: Option<f64>,
    },
    /// Write the synthetic multi-robot datasets to disk.
    Fixture(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML config with `sim.*` and `replay.*` keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Base seed (simulation) or synthetic dataset seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "standard,proposed")]
    pub filters: Vec<Variant>,
    /// Number of Monte-Carlo runs.
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
    /// A dataset directory, or a directory of dataset directories.
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Robot subjects to replay.
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    pub robots: Option<Vec<u32>>,
}

/// Why a command stopped; each maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    Audit(String),
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Audit(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Audit(m) | Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<invekf::Error> for Failure {
    fn from(e: invekf::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Benchmark(c) => commands::benchmark(&c),
        Command::Utias(c) => commands::utias(&c),
        Command::Audit { common, inject_fault } => commands::audit(&common, inject_fault),
        Command::Fixture(c) => commands::fixture(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
