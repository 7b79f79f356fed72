//! `mtekit`: batch front end for summary tables, estimation reports and
//! simulated data sets.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 weak instrument
//! (when fatal), 4 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod fit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtekit::{ColumnRole, InstrumentMode, SeType};

use config::{parse_grid, parse_role, Estimator};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
    WeakInstrument(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::WeakInstrument(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::WeakInstrument(m) => write!(f, "weak instrument: {m}"),
        }
    }
}

impl From<mtekit::Error> for CliError {
    fn from(e: mtekit::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mtekit",
    version,
    about = "Marginal treatment effect estimation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Means and standard deviations by treatment status.
    Summarize(FitArgs),
    /// OLS, 2SLS, local-IV MTE and normal-model estimates with a JSON report.
    Fit(FitArgs),
    /// Draw a data set from a generalized Roy model.
    Simulate(SimulateArgs),
}

/// Flags mirror the config file keys and take precedence over them.
#[derive(Args, Debug, Default)]
pub struct FitArgs {
    /// JSON config, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// `column=role`, or `column=item_expenditure:category`. Repeatable;
    /// replaces the config's role map.
    #[arg(long = "role", value_parser = parse_role)]
    roles: Vec<ColumnRole>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long, value_enum)]
    estimator: Option<Estimator>,
    #[arg(long, value_parser = parse_enum::<InstrumentMode>)]
    instrument_mode: Option<InstrumentMode>,
    #[arg(long)]
    policy_shift: Option<f64>,
    #[arg(long)]
    policy_instrument: Option<String>,
    /// `start:stop:step`.
    #[arg(long, value_parser = parse_grid)]
    v_grid: Option<Vec<f64>>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long, value_parser = parse_enum::<SeType>)]
    se: Option<SeType>,
    /// Bootstrap replicates; 0 disables.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cluster: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Report weak instruments without failing.
    #[arg(long)]
    allow_weak_instrument: bool,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown value `{s}`"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Summarize(a) => commands::summarize(a),
        Command::Fit(a) => fit::run(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtekit: {e}");
            ExitCode::from(e.code())
        }
    }
}
