//! Command-line front end for `torwrap`.
//!
//! Subcommands: `fit` (root search on a CSV of angles, JSON report),
//! `simulate` (contamination sweeps, CSV and JSON tables) and `density`
//! (Wrapped Normal densities at points or on a grid).

pub mod data;
pub mod density;
pub mod fit;
pub mod manifest;
pub mod simulate;

use std::io::Write;
use std::path::Path;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error("no start converged to a root")]
    NoRoot,
    #[error(transparent)]
    Model(torwrap::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad input or flags, 3 when no root converged, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(_) | CliError::Model(_) => 2,
            CliError::NoRoot => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "torwrap", version, about = "Robust Wrapped Normal fitting on the torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit by bootstrap root search and report every distinct root.
    Fit(fit::FitArgs),
    /// Run the contamination study over a grid of scenarios.
    Simulate(simulate::SimulateArgs),
    /// Evaluate the Wrapped Normal density.
    Density(density::DensityArgs),
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit(args) => fit::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Density(args) => density::run(args),
    }
}

/// Writes to `path`, or to stdout when absent.
pub fn write_output(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}
