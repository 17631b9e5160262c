//! `indiffvol`: indifference-price skews, Hull-White asymptotics, skew
//! calibration and verification checks from JSON parameter files.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use indiff_core::calibrate::DEFAULT_SPLIT_X;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] indiff_core::Error),
    #[error("invalid parameter: {0}")]
    Validation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use indiff_core::Error as E;
        match self {
            CliError::Validation(_) | CliError::ChecksFailed { .. } => 2,
            CliError::Data(_) => 4,
            CliError::Core(e) => match e {
                E::Domain(_) | E::Validation(_) => 2,
                E::Parse { .. } | E::InsufficientData(_) | E::Io(_) => 4,
                E::NoSolution { .. }
                | E::InconclusiveSup { .. }
                | E::Instability { .. }
                | E::Numeric(_)
                | E::Simulation { .. }
                | E::Unidentifiable(_) => 3,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "indiffvol", version, about = "Indifference prices and implied-volatility skews")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the pricing equation and write the implied-volatility curve.
    Skew {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `gamma=v1,v2,...` or `eta=v1,v2,...`; one output file per value.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Write the small-maturity Hull-White implied-volatility expansion.
    Asymptotic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `eta`, `mu`, `kappa`, `y` or `tau` with a comma list.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Fit (kappa, y, mu*eta) to a quote file `tau,log_moneyness,implied_vol[,weight]`.
    Calibrate {
        quotes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPLIT_X, allow_hyphen_values = true)]
        split_x: f64,
        #[arg(long, default_value = "calibration.json")]
        out: PathBuf,
    },
    /// Driver admissibility, model assumptions, price bounds and asymptotic residuals.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Indifference price of the configured contract at the spot.
    Price {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the Monte Carlo seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Skew { config, out, sweep } => commands::skew(&config, out, sweep.as_deref()),
        Command::Asymptotic { config, out, sweep } => commands::asymptotic(&config, out, sweep.as_deref()),
        Command::Calibrate { quotes, split_x, out } => commands::calibrate(&quotes, split_x, &out),
        Command::Check { config } => commands::check(&config),
        Command::Price { config, out, seed } => commands::price(&config, out, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("indiffvol: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
