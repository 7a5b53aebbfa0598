//! `ucci`: turn logged two-model inference records into a calibrated,
//! cost-optimal cascade router.
//!
//! The pipeline is three commands: `calibrate` fits an isotonic map from
//! margin uncertainty to error probability, `select` picks the cheapest
//! accuracy-feasible threshold on a validation split, and `eval` reports
//! the routed cost and micro-F1 of the resulting policy on a test split.
//! Around those sit `sweep` (the full cost/accuracy curve), `synth`
//! (matched synthetic workloads), `report` (the whole pipeline in one
//! invocation), `serve` (a stdin/stdout stream router), and `verify`
//! (the self-checking property suite).
//!
//! Data goes to standard output, diagnostics to standard error, JSON
//! everywhere. Exit codes: 0 success (including selection that flags an
//! infeasible target), 1 usage, 2 validation, 3 I/O, 4 verify property
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ucci_core::{Error, SignalKind};

#[derive(Debug, Parser)]
#[command(
    name = "ucci",
    version,
    about = "Calibrated cost-optimal cascade routing over logged inference records"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an isotonic calibration map from margin uncertainty to error
    /// probability; print ECE before/after as JSON.
    Calibrate(CalibrateArgs),
    /// Pick the cheapest threshold meeting the accuracy target on a
    /// validation set; write the policy file.
    Select(SelectArgs),
    /// Evaluate a policy file on a record set: cost, micro-F1, per-entity
    /// table, cost sensitivity, escalated-subset diagnostic.
    Eval(EvalArgs),
    /// Sweep every threshold and emit the cost/accuracy curve as CSV.
    Sweep(SweepArgs),
    /// Generate a synthetic workload from a spec file and emit JSONL
    /// records.
    Synth(SynthArgs),
    /// Run the whole pipeline (split, calibrate, select all routers,
    /// evaluate) and emit one combined JSON report.
    Report(ReportArgs),
    /// Route requests from standard input, one JSON line per request.
    Serve(ServeArgs),
    /// Run the property suite (oracle equivalences, learning rate,
    /// coverage, falsification); exit 4 if any property fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Calibration records, JSONL.
    #[arg(long)]
    records: PathBuf,
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the fitted model JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// ECE bin count override.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Validation records, JSONL.
    #[arg(long)]
    records: PathBuf,
    /// Calibration model JSON (required for the ucci router).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accuracy target; overrides the config's accuracy_target.
    #[arg(long)]
    tau: Option<f64>,
    /// Large-model cost in units of the small model; overrides the config.
    #[arg(long)]
    cost_ratio: Option<f64>,
    /// Which router to select.
    #[arg(long, value_enum, default_value_t = Baseline::Ucci)]
    baseline: Baseline,
    /// Where to write the selected policy JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Test records, JSONL.
    #[arg(long)]
    records: PathBuf,
    /// Policy file to evaluate.
    #[arg(long)]
    policy: PathBuf,
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Large-model cost in units of the small model; overrides the config.
    #[arg(long)]
    cost_ratio: Option<f64>,
    /// Bootstrap resample count; confidence intervals are emitted only
    /// when this is given.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Bootstrap seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Records to sweep, JSONL.
    #[arg(long)]
    records: PathBuf,
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Large-model cost in units of the small model; overrides the config.
    #[arg(long)]
    cost_ratio: Option<f64>,
    /// Which uncertainty signal to sweep.
    #[arg(long, value_enum, default_value_t = Signal::Margin)]
    signal: Signal,
    /// Where to write the CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Synthetic workload spec, JSON.
    #[arg(long)]
    config: PathBuf,
    /// Seed override for the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the records JSONL; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Full record set, JSONL; split 30/20/50 into calibration,
    /// validation, and test.
    #[arg(long)]
    records: PathBuf,
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accuracy target; overrides the config's accuracy_target.
    #[arg(long)]
    tau: Option<f64>,
    /// Large-model cost in units of the small model; overrides the config.
    #[arg(long)]
    cost_ratio: Option<f64>,
    /// Bootstrap resample count for the primary router's test report.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Split seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Policy file to serve.
    #[arg(long)]
    policy: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Base seed for every property check.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// `--signal` values, mapped onto the library's signal kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Signal {
    Margin,
    Entropy,
    Maxprob,
}

impl Signal {
    fn kind(self) -> SignalKind {
        match self {
            Signal::Margin => SignalKind::Margin,
            Signal::Entropy => SignalKind::MeanEntropy,
            Signal::Maxprob => SignalKind::MeanMaxProb,
        }
    }
}

/// `--baseline` values: which router `select` builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Ucci,
    Entropy,
    Conformal,
    Frugal,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version render through the same path; only real
            // usage mistakes take the usage exit code.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Select(args) => commands::select(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Synth(args) => commands::synth(args),
        Command::Report(args) => commands::report(args),
        Command::Serve(args) => commands::serve(args),
        Command::Verify(args) => commands::verify(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            emit_error(&err);
            if err.is_io() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

/// One machine-readable error object on standard error.
fn emit_error(err: &Error) {
    let kind = if err.is_io() { "io" } else { "validation" };
    let object = serde_json::json!({ "error": err.to_string(), "kind": kind });
    eprintln!("{object}");
}
