//! `dpmarg`: release differentially private marginal tables.
//!
//! Three subcommands mirror the select / measure / reconstruct pipeline:
//!
//! - `plan` optimizes per-mechanism Gaussian noise scales for a workload
//!   under either a privacy budget or a loss bound, and writes the plan
//!   with its predicted error report. Planning never reads the dataset —
//!   the noise scales depend only on the schema and workload.
//! - `run` executes the full pipeline over a dataset: measure every
//!   residual query with calibrated noise, reconstruct unbiased marginal
//!   tables, and write one CSV per requested marginal plus a residual
//!   audit file.
//! - `account` converts a privacy cost into ρ-zCDP, μ-GDP, and a table of
//!   (ε, δ) guarantees.
//!
//! Exit codes: 0 success, 2 configuration error (flags or input files),
//! 3 solver failure, 4 dataset error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::exit;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::CliError;

#[derive(Parser)]
#[command(name = "dpmarg", version, about = "Differentially private marginal tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize noise scales for a workload; writes plan.json and a report.
    Plan(PlanArgs),
    /// Full pipeline: plan (or load one), measure a dataset, reconstruct.
    Run(RunArgs),
    /// Convert a privacy cost to ρ-zCDP, μ-GDP, and (ε, δ) guarantees.
    Account(AccountArgs),
}

/// Constraint flags: exactly one must be given (for `run`, a stored plan
/// may replace them).
#[derive(Args, Debug, Clone)]
pub struct BudgetFlags {
    /// Total privacy cost to spend.
    #[arg(long, value_name = "PCOST")]
    pub(crate) budget_pcost: Option<f64>,
    /// ρ-zCDP budget (pcost = 2ρ).
    #[arg(long, value_name = "RHO")]
    pub(crate) budget_rho: Option<f64>,
    /// μ-GDP budget (pcost = μ²).
    #[arg(long, value_name = "MU")]
    pub(crate) budget_mu: Option<f64>,
    /// (ε, δ)-DP budget as "EPS,DELTA"; the weakest cost meeting it is used.
    #[arg(long, value_name = "EPS,DELTA", value_parser = parse_eps_delta)]
    pub(crate) budget_eps_delta: Option<(f64, f64)>,
    /// Loss bound γ: spend the least privacy cost achieving loss ≤ γ.
    #[arg(long, value_name = "GAMMA")]
    pub(crate) loss_bound: Option<f64>,
}

fn parse_eps_delta(s: &str) -> Result<(f64, f64), String> {
    let (e, d) = s
        .split_once(',')
        .ok_or_else(|| format!("expected EPS,DELTA, got {s:?}"))?;
    let eps: f64 = e.trim().parse().map_err(|_| format!("bad epsilon {e:?}"))?;
    let delta: f64 = d.trim().parse().map_err(|_| format!("bad delta {d:?}"))?;
    Ok((eps, delta))
}

/// Optimization objective for the select step.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Weighted sum of per-cell variances (closed form).
    Sumvar,
    /// Worst weighted per-cell variance (interior-point solve).
    Maxvar,
}

#[derive(Args)]
pub struct PlanArgs {
    /// Schema JSON file.
    #[arg(long)]
    pub(crate) schema: PathBuf,
    /// Workload JSON file.
    #[arg(long)]
    pub(crate) workload: PathBuf,
    #[arg(long, value_enum, default_value = "sumvar")]
    pub(crate) objective: Objective,
    #[command(flatten)]
    pub(crate) budget: BudgetFlags,
    /// Master seed to record in the plan header (planning itself is
    /// deterministic and uses no randomness).
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// ε values for the reported δ curve.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,2.0")]
    pub(crate) epsilons: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    pub(crate) out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub(crate) schema: PathBuf,
    #[arg(long)]
    pub(crate) workload: PathBuf,
    /// Dataset CSV file (header = attribute names; cells are labels or
    /// 0-based integer codes).
    #[arg(long)]
    pub(crate) dataset: PathBuf,
    /// Load a stored plan instead of solving inline.
    #[arg(long)]
    pub(crate) plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sumvar")]
    pub(crate) objective: Objective,
    #[command(flatten)]
    pub(crate) budget: BudgetFlags,
    /// Master seed for all noise (random when omitted; always echoed).
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// TEST ONLY: measure with zero noise. The output is NOT private.
    #[arg(long)]
    pub(crate) zero_noise: bool,
    /// Output directory.
    #[arg(long)]
    pub(crate) out: PathBuf,
}

#[derive(Args)]
pub struct AccountArgs {
    #[command(flatten)]
    pub(crate) budget: BudgetFlags,
    /// Read the privacy cost from a stored plan instead of budget flags.
    #[arg(long)]
    pub(crate) plan: Option<PathBuf>,
    /// ε values for the δ table.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,2.0")]
    pub(crate) epsilons: Vec<f64>,
}

fn main() {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Plan(args) => commands::cmd_plan(&args),
        Command::Run(args) => commands::cmd_run(&args),
        Command::Account(args) => commands::cmd_account(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        exit(e.exit_code());
    }
}
