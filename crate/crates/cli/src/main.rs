// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! `qjump` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 computation or
//! output error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Atom-cavity quantum-jump simulator.
#[derive(Debug, Parser)]
#[command(name = "qjump", version, about)]
pub struct Cli {
    /// Scenario file with `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for stochastic commands.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory [default: config `output_dir`, then $QJUMP_OUT_DIR, then ./qjump-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Omit the generation timestamp so outputs are byte-reproducible.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady-state transmission spectrum from the master equation.
    Spectrum(SpectrumArgs),
    /// Simulate a telegraph ensemble, reconstruct it and extract rates.
    Telegraph(TelegraphArgs),
    /// Fit the count histogram and reconstruct spin traces.
    Reconstruct(ReconstructArgs),
    /// Extract jump rates from reconstructed spin traces.
    Rates(RatesArgs),
    /// Model, simulate and fit the normal-mode-splitting spectrum.
    Nms(NmsArgs),
    /// Two-atom transmission curves with a Monte-Carlo overlay.
    Twoatom(TwoAtomArgs),
}

#[derive(Debug, Args, Default)]
pub struct SpectrumArgs {
    /// Coupling g/2π, MHz.
    #[arg(long)]
    pub g: Option<f64>,
    /// Scan half-width, MHz.
    #[arg(long)]
    pub span: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TelegraphArgs {
    #[arg(long)]
    pub traces: Option<usize>,
    #[arg(long, value_name = "MS")]
    pub duration_ms: Option<f64>,
    /// Histogram quantiles instead of fitted-Gaussian thresholds.
    #[arg(long)]
    pub empirical_thresholds: bool,
}

#[derive(Debug, Args, Default)]
pub struct ReconstructArgs {
    /// Count-trace manifest.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub empirical_thresholds: bool,
}

#[derive(Debug, Args, Default)]
pub struct RatesArgs {
    /// Spin-trace manifest.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "MS")]
    pub max_lag_ms: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct NmsArgs {
    /// Measured spectrum to fit instead of simulated data.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub cycles: Option<u64>,
    /// Simulate every experimental cycle including the state readout.
    #[arg(long)]
    pub full_cycle: bool,
    /// Write the model only.
    #[arg(long)]
    pub no_fit: bool,
}

#[derive(Debug, Args, Default)]
pub struct TwoAtomArgs {
    #[arg(long)]
    pub traces: Option<usize>,
    /// Per-atom rate with both atoms coupled, s⁻¹.
    #[arg(long)]
    pub r2: Option<f64>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Compute(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Compute(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = scenario::Scenario::load(&cli).and_then(|s| commands::run(&s));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("configuration error", m),
                Failure::Compute(m) => ("error", m),
            };
            eprintln!("qjump: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
