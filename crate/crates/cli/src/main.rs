//! `kpclr` command line.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure, 3 no grid candidate met the cost-ratio target.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "kpclr", version, about = "Kernel principal-components logistic regression with asymmetric costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Simulate(SimulateArgs),
    /// Fit one kernel and ρ on the training split and score the validation split.
    Fit(FitArgs),
    /// Grid search over kernels and ρ, pick a model on validation, score test.
    Select(SelectArgs),
    /// Score a labeled CSV with a saved model.
    Evaluate(EvaluateArgs),
    /// Forecast unlabeled cases with a saved model.
    Predict(PredictArgs),
    /// Stepwise backward-AIC logistic baseline.
    Baseline(BaselineArgs),
    /// Kernel model and baseline on identical splits and costs.
    Compare(SelectArgs),
    /// Summarize a saved model and write its spectrum.
    Report(ReportArgs),
}

/// Where the cases come from and how they are split.
#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// TOML run configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Headed CSV of cases.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Response column name.
    #[arg(long)]
    response: Option<String>,
    /// TOML file declaring categorical columns.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Misclassification costs as FP:FN.
    #[arg(long)]
    costs: Option<String>,
    /// Split seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Split each class separately.
    #[arg(long)]
    stratified: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "nonlinear_binary")]
    kind: String,
    #[arg(long, default_value_t = 1500)]
    n: usize,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Response column name in the written file.
    #[arg(long, default_value = "y")]
    response: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `radial:γ` or `anova:γ:d`.
    #[arg(long, default_value = "anova:3:2")]
    kernel: String,
    /// Fraction of centered-kernel variance to retain.
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    /// Treat the response as numeric (least squares on the components).
    #[arg(long)]
    regression: bool,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TOML grid overrides.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Comma-separated ρ values, e.g. `0.5,0.7,0.9`.
    #[arg(long)]
    rho_list: Option<String>,
    /// Relative tolerance around the FN/FP target.
    #[arg(long)]
    ratio_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled CSV; must contain the model's response column.
    #[arg(long)]
    input: PathBuf,
    /// Split assignment CSV written by `select` or `compare`; only its test rows are scored.
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Forecasts CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
