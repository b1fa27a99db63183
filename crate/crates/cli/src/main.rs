//! `stochex <command> --scenario <path> --out <path> [--k <real>] [--threads <int>]`
//!
//! Exit codes: 0 success, 2 invalid scenario or arguments, 3 numerical
//! failure (for example an ambiguous winding), 1 when the output cannot be
//! written.

mod commands;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "stochex", version, about = "Stochastic extrema from high-frequency integrals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output file (JSON, or CSV for `trace`).
    #[arg(long)]
    out: PathBuf,
    /// Frequency; `k_max` for `trace` and `estimate`.
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One oscillatory integral I(k, ω).
    Integral(Common),
    /// Stationary points at the scenario's ω and the joint point in (t, ω).
    Phases(Common),
    /// Asymptotic formulas against quadrature over the k grid.
    Asym(Common),
    /// The traced curve as CSV.
    Trace(Common),
    /// Extremum estimate and no-extrema verdict.
    Estimate(Common),
    /// Brute-force grid extrema.
    Oracle(Common),
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    scenario: &'a str,
    scenario_sha256: &'a str,
    result: T,
}

fn write_json<T: Serialize>(path: &Path, command: &str, s: &scenario::Loaded, result: T) -> Result<(), CliError> {
    let envelope = Envelope {
        tool: "stochex",
        version: env!("CARGO_PKG_VERSION"),
        command,
        scenario: &s.scenario.name,
        scenario_sha256: &s.sha256,
        result,
    };
    let mut text = serde_json::to_string_pretty(&envelope).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (name, common) = match &cli.command {
        Command::Integral(c) => ("integral", c),
        Command::Phases(c) => ("phases", c),
        Command::Asym(c) => ("asym", c),
        Command::Trace(c) => ("trace", c),
        Command::Estimate(c) => ("estimate", c),
        Command::Oracle(c) => ("oracle", c),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    if common.k.is_some_and(|k| !k.is_finite()) {
        return Err(CliError::Validation("--k must be finite".into()));
    }
    let s = scenario::load(&common.scenario)?;
    let out = &common.out;
    let summary = match &cli.command {
        Command::Integral(_) => {
            let r = commands::integral(&s, common.k)?;
            let line = format!("I({}) = {} ± {:e}", r.k, r.value, r.error);
            write_json(out, name, &s, r)?;
            line
        }
        Command::Phases(_) => {
            let r = commands::phases(&s)?;
            let line = format!("{} stationary point(s)", r.points.len());
            write_json(out, name, &s, r)?;
            line
        }
        Command::Asym(_) => {
            let r = commands::asym(&s, common.k)?;
            let worst = r
                .theorem1
                .rows
                .iter()
                .filter_map(|r| r.relative_error)
                .fold(0.0, f64::max);
            let line = format!("{} row(s), largest relative error {worst:.3e}", r.theorem1.rows.len());
            write_json(out, name, &s, r)?;
            line
        }
        Command::Trace(_) => {
            let t = commands::trace(&s, common.k)?;
            write_bytes(out, &commands::trace_csv(&t)?)?;
            format!("{} points, theta(k_max) = {}", t.lambda.len(), t.theta.last().unwrap_or(&0.0))
        }
        Command::Estimate(_) => {
            let r = commands::estimate_cmd(&s, common.k)?;
            let line = format!(
                "smin = {}, smax = {}, converged = {}, no extrema = {}",
                r.estimate.smin, r.estimate.smax, r.estimate.converged, r.verdict.no_extrema
            );
            write_json(out, name, &s, r)?;
            line
        }
        Command::Oracle(_) => {
            let r = commands::oracle(&s)?;
            let line = format!("min = {}, max = {}", r.min, r.max);
            write_json(out, name, &s, r)?;
            line
        }
    };
    Ok(format!("{name} {}: {summary}", s.scenario.name))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stochex: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
