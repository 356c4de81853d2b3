//! `amdsp` command line: design plans, evaluate OC and ASN, sweep bands,
//! simulate lots.
//!
//! Exit codes: 0 ok, 2 usage, 3 infeasible design, 4 numerical failure.

mod commands;
mod document;

use std::path::PathBuf;
use std::process::ExitCode;

use amdsp::double_plan::OcMethod;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "amdsp",
    version,
    about = "ASN-minimax double sampling plans by variables"
)]
struct Cli {
    #[command(flatten)]
    numeric: NumericArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct NumericArgs {
    /// Gauss-Legendre nodes per dimension for the double-plan integrals.
    #[arg(long, global = true, default_value_t = 32)]
    pub quad_nodes: usize,
    /// Largest accepted quadrature error estimate. The default node count
    /// leaves errors of order 1e-5 near σ₀ on the two-sided double plans.
    #[arg(long, global = true, default_value_t = 1e-4)]
    pub tol: f64,
    /// How the second-stage acceptance region is integrated.
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::NestedBounds)]
    pub oc_method: MethodArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodArg {
    NestedBounds,
    Conditional,
}

impl From<MethodArg> for OcMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::NestedBounds => OcMethod::NestedBounds,
            MethodArg::Conditional => OcMethod::Conditional,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindArg {
    Single,
    Double,
    OneSided,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhatArg {
    Oc,
    Asn,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design a plan for a two-point OC requirement; prints a plan document.
    Design(DesignArgs),
    /// OC and ASN at one process point.
    Eval(PointArgs),
    /// OC/ASN along the iso-p-line of a fraction defective, as CSV.
    Band(BandArgs),
    /// Monte-Carlo estimate of OC and ASN at one process point.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Double)]
    pub kind: KindArg,
    #[arg(long, allow_negative_numbers = true)]
    pub lower: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub upper: f64,
    #[arg(long)]
    pub p1: f64,
    #[arg(long)]
    pub p2: f64,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub beta: f64,
    /// Iteration budget of the tightening loop.
    #[arg(long, default_value_t = 100)]
    pub max_steps: usize,
}

#[derive(Args, Debug)]
pub struct PointArgs {
    /// Plan document (JSON).
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct BandArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Fraction defective of the iso-p-line.
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = WhatArg::Both)]
    pub what: WhatArg,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long, default_value_t = 1_000_000)]
    pub replicates: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    /// Written to standard output before exiting, e.g. a partial trace.
    pub output: Option<String>,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
            output: None,
        }
    }
}

impl From<amdsp::Error> for Failure {
    fn from(e: amdsp::Error) -> Self {
        use amdsp::Error::*;
        let code = match e {
            InvalidArgument(_) | EmptyAcceptanceInterval { .. } => 2,
            Infeasible(_) => 3,
            Quadrature { .. } | NoConvergence(_) => 4,
        };
        Self {
            code,
            message: e.to_string(),
            output: None,
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("AMDSP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::usage(format!(
            "AMDSP_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<String, Failure> {
    configure_threads()?;
    let numeric = cli.numeric;
    match cli.command {
        Command::Design(a) => commands::design(&a, numeric),
        Command::Eval(a) => commands::eval(&a, numeric),
        Command::Band(a) => commands::band(&a, numeric),
        Command::Simulate(a) => commands::simulate(&a, numeric),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            if let Some(out) = &f.output {
                print!("{out}");
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
