//! Command handlers. Each returns the process exit code on success and a
//! library error otherwise; `main` maps errors onto exit codes 2/3.

use std::io::{BufRead, ErrorKind, Write};
use std::path::Path;
use std::process::ExitCode;

use serde::{Deserialize, Serialize};
use serde_json::json;

use ucci_core::{
    assumption_ii_diagnostic, bootstrap_ci, build_entropy_baseline, build_frugal_baseline,
    cost_sensitivity, derive_correctness, evaluate_cascade, evaluate_single,
    expected_calibration_error, fit_isotonic, load_policy, load_records, pareto_sweep,
    run_default_verification, save_policy, score_records, select_conformal, select_threshold,
    split_dataset, CalibrationModel, CascadeReport, CostModel, EntityMap, Error, InferenceRecord,
    ModelKind, Orientation, Result, RoutingPolicy, RunConfig, ScoreSource, SelectionResult,
    SignalKind, Statistic, SyntheticSpec, TokenStats,
};

use crate::{
    Baseline, CalibrateArgs, EvalArgs, ReportArgs, SelectArgs, ServeArgs, SweepArgs, SynthArgs,
    VerifyArgs,
};

/// Cost ratios every report re-prices the fixed decision set at.
const SENSITIVITY_RATIOS: [f64; 3] = [3.02, 5.0, 10.0];

const CALIBRATION_FRACTION: f64 = 0.3;
const VALIDATION_FRACTION: f64 = 0.2;
const TEST_FRACTION: f64 = 0.5;

pub fn calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let records = load_records(&args.records, &config.entity_schema)?;
    let u = score_records(&records, SignalKind::Margin)?.values;
    let e: Vec<u8> = records
        .iter()
        .map(|r| derive_correctness(r, ModelKind::Small))
        .collect();
    let model = CalibrationModel::Isotonic(fit_isotonic(&u, &e)?);
    let p: Vec<f64> = u.iter().map(|&x| model.predict(x)).collect();

    let bins = args.bins.unwrap_or(config.ece_bins);
    let ece_before = expected_calibration_error(&u, &e, bins)?;
    let ece_after = expected_calibration_error(&p, &e, bins)?;

    if let Some(out) = &args.out {
        model.save(out)?;
        eprintln!("wrote calibration model to {}", out.display());
    }
    let doc = json!({
        "n_records": records.len(),
        "bins": bins,
        "ece_before": ece_before,
        "ece_after": ece_after,
        "model": model,
    });
    emit(None, &pretty(&doc))?;
    Ok(ExitCode::SUCCESS)
}

pub fn select(args: SelectArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let cost_model = cost_model_for(&config, args.cost_ratio)?;
    let tau = tau_for(&config, args.tau)?;
    let records = load_records(&args.records, &config.entity_schema)?;

    let result = match args.baseline {
        Baseline::Ucci => {
            let model_path = args.model.as_ref().ok_or_else(|| {
                Error::InvalidConfig("the ucci router needs --model (run calibrate first)".into())
            })?;
            let model = CalibrationModel::load(model_path)?;
            let u = score_records(&records, SignalKind::Margin)?.values;
            let p: Vec<f64> = u.iter().map(|&x| model.predict(x)).collect();
            select_threshold(&records, &p, ScoreSource::CalibratedP(model), cost_model, tau)?
        }
        Baseline::Entropy => build_entropy_baseline(&records, cost_model, tau)?,
        Baseline::Frugal => build_frugal_baseline(&records, cost_model, tau)?,
        Baseline::Conformal => {
            // One records file serves both conformal roles: quantiles come
            // from its correct records, the threshold sweep from all of it.
            let u = score_records(&records, SignalKind::Margin)?.values;
            select_conformal(&records, &u, &records, &u, cost_model, tau)?
        }
    };

    if let Some(out) = &args.out {
        save_policy(&result.policy, out)?;
        eprintln!("wrote policy to {}", out.display());
    }
    if result.feasible {
        eprintln!(
            "selected threshold {} (validation cost {:.4}, accuracy {:.4})",
            result.policy.threshold(),
            result.validation_cost,
            result.validation_accuracy
        );
    } else {
        eprintln!(
            "no threshold reaches accuracy {tau}; emitting the accuracy-maximizing policy \
             (accuracy {:.4}) flagged infeasible",
            result.validation_accuracy
        );
    }
    emit(None, &pretty(&serde_json::to_value(&result).expect("selection serializes")))?;
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let cost_model = cost_model_for(&config, args.cost_ratio)?;
    let records = load_records(&args.records, &config.entity_schema)?;
    let policy = load_policy(&args.policy)?;

    let doc = eval_document(&policy, &records, cost_model, &config, args.bootstrap, args.seed)?;
    emit(args.out.as_deref(), &pretty(&doc))?;
    Ok(ExitCode::SUCCESS)
}

/// The full evaluation document for one policy on one record set:
/// cascade report, optional bootstrap intervals, the re-priced
/// cost-sensitivity table, and the escalated-subset diagnostic.
fn eval_document(
    policy: &RoutingPolicy,
    records: &[InferenceRecord],
    cost_model: CostModel,
    config: &RunConfig,
    bootstrap: Option<usize>,
    seed: Option<u64>,
) -> Result<serde_json::Value> {
    let report = evaluate_cascade(policy, records, cost_model)?;
    let sensitivity = {
        let decisions: Vec<ModelKind> = records
            .iter()
            .map(|r| ucci_core::route(policy, r))
            .collect::<Result<_>>()?;
        cost_sensitivity(&decisions, &SENSITIVITY_RATIOS)?
    };
    let diagnostic = diagnostic_or_null(policy, records)?;
    let bootstrap = bootstrap
        .map(|resamples| bootstrap_block(records, policy, cost_model, resamples, seed, config))
        .transpose()?;

    let mut doc = json!({
        "report": report,
        "cost_sensitivity": sensitivity,
        "diagnostic": diagnostic,
    });
    if let Some(block) = bootstrap {
        doc["bootstrap"] = block;
    }
    Ok(doc)
}

/// Percentile-bootstrap intervals for the three reported statistics.
fn bootstrap_block(
    records: &[InferenceRecord],
    policy: &RoutingPolicy,
    cost_model: CostModel,
    resamples: usize,
    seed: Option<u64>,
    config: &RunConfig,
) -> Result<serde_json::Value> {
    let seed = seed.unwrap_or(config.seed);
    let mut block = serde_json::Map::new();
    for (name, statistic) in [
        ("cost", Statistic::Cost),
        ("micro_f1", Statistic::MicroF1),
        ("cost_saving_vs_large", Statistic::CostSavingVsLarge),
    ] {
        let ci = bootstrap_ci(records, policy, cost_model, statistic, resamples, seed)?;
        block.insert(name.into(), serde_json::to_value(ci).expect("interval serializes"));
    }
    Ok(serde_json::Value::Object(block))
}

/// The assumption-(ii) diagnostic, or JSON null for a policy that
/// escalates nothing (the quantity is undefined there, not zero).
fn diagnostic_or_null(
    policy: &RoutingPolicy,
    records: &[InferenceRecord],
) -> Result<serde_json::Value> {
    match assumption_ii_diagnostic(policy, records) {
        Ok(d) => Ok(serde_json::to_value(d).expect("diagnostic serializes")),
        Err(Error::DiagnosticUndefined) => {
            eprintln!("diagnostic skipped: the policy escalates no record");
            Ok(serde_json::Value::Null)
        }
        Err(other) => Err(other),
    }
}

pub fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let cost_model = cost_model_for(&config, args.cost_ratio)?;
    let records = load_records(&args.records, &config.entity_schema)?;
    let kind = args.signal.kind();
    let scored = score_records(&records, kind)?;

    // The sweep machinery walks uncertainty-oriented scores (escalate
    // above the threshold). Confidence signals are negated on the way in
    // and their thresholds negated back, so the CSV stays in the signal's
    // own units with escalation below the threshold.
    let confidence = scored.orientation == Orientation::Confidence;
    let scores: Vec<f64> = if confidence {
        scored.values.iter().map(|&s| -s).collect()
    } else {
        scored.values
    };
    let mut curve = pareto_sweep(&records, &scores, cost_model)?;
    if confidence {
        for point in &mut curve.points {
            point.threshold = -point.threshold;
        }
    }
    eprintln!("swept {} operating points over the {kind} signal", curve.points.len());
    emit(args.out.as_deref(), &curve.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    let mut spec = SyntheticSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let records = spec.generate()?;
    eprintln!("generated {} records (seed {})", records.len(), spec.seed);
    match &args.out {
        Some(path) => ucci_core::write_records(path, &records)?,
        None => emit(None, &ucci_core::records_to_jsonl(&records))?,
    }
    Ok(ExitCode::SUCCESS)
}

pub fn report(args: ReportArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let cost_model = cost_model_for(&config, args.cost_ratio)?;
    let tau = tau_for(&config, args.tau)?;
    let seed = args.seed.unwrap_or(config.seed);
    let records = load_records(&args.records, &config.entity_schema)?;
    let n_records = records.len();
    let (cal, val, test) = split_dataset(
        records,
        (CALIBRATION_FRACTION, VALIDATION_FRACTION, TEST_FRACTION),
        seed,
    )?;

    // Step 1: fit the calibration map on the calibration split.
    let cal_u = score_records(&cal.records, SignalKind::Margin)?.values;
    let cal_e: Vec<u8> = cal
        .records
        .iter()
        .map(|r| derive_correctness(r, ModelKind::Small))
        .collect();
    let isotonic = fit_isotonic(&cal_u, &cal_e)?;
    let model = CalibrationModel::Isotonic(isotonic);

    // Held-out calibration quality, before and after the map.
    let test_u = score_records(&test.records, SignalKind::Margin)?.values;
    let test_e: Vec<u8> = test
        .records
        .iter()
        .map(|r| derive_correctness(r, ModelKind::Small))
        .collect();
    let ece_before = expected_calibration_error(&test_u, &test_e, config.ece_bins)?;
    let test_p: Vec<f64> = test_u.iter().map(|&x| model.predict(x)).collect();
    let ece_after = expected_calibration_error(&test_p, &test_e, config.ece_bins)?;

    // Step 2: select every router on the validation split.
    let val_u = score_records(&val.records, SignalKind::Margin)?.values;
    let val_p: Vec<f64> = val_u.iter().map(|&x| model.predict(x)).collect();
    let ucci = select_threshold(
        &val.records,
        &val_p,
        ScoreSource::CalibratedP(model.clone()),
        cost_model,
        tau,
    )?;
    let entropy = build_entropy_baseline(&val.records, cost_model, tau)?;
    let conformal = select_conformal(&cal.records, &cal_u, &val.records, &val_u, cost_model, tau)?;
    let frugal = build_frugal_baseline(&val.records, cost_model, tau)?;

    // Step 3: evaluate everything on the test split.
    let mut routers = serde_json::Map::new();
    for (name, selection) in [
        ("ucci", &ucci),
        ("entropy", &entropy),
        ("conformal", &conformal),
        ("frugal", &frugal),
    ] {
        routers.insert(name.into(), router_entry(selection, &test.records, cost_model)?);
    }
    if let Some(resamples) = args.bootstrap {
        routers["ucci"]["bootstrap"] =
            bootstrap_block(&test.records, &ucci.policy, cost_model, resamples, None, &config)?;
    }

    let small = evaluate_single(&test.records, ModelKind::Small, cost_model)?;
    let large = evaluate_single(&test.records, ModelKind::Large, cost_model)?;

    let sensitivity = {
        let decisions: Vec<ModelKind> = test
            .records
            .iter()
            .map(|r| ucci_core::route(&ucci.policy, r))
            .collect::<Result<_>>()?;
        cost_sensitivity(&decisions, &SENSITIVITY_RATIOS)?
    };
    let diagnostic = diagnostic_or_null(&ucci.policy, &test.records)?;

    let doc = json!({
        "n_records": n_records,
        "splits": {
            "calibration": cal.records.len(),
            "validation": val.records.len(),
            "test": test.records.len(),
        },
        "tau": tau,
        "cost_ratio": cost_model.ratio(),
        "seed": seed,
        "calibration": {
            "model": model,
            "bins": config.ece_bins,
            "ece_before": ece_before,
            "ece_after": ece_after,
        },
        "routers": routers,
        "singles": { "small": small, "large": large },
        "cost_sensitivity": sensitivity,
        "diagnostic": diagnostic,
    });
    emit(args.out.as_deref(), &pretty(&doc))?;
    Ok(ExitCode::SUCCESS)
}

/// One router's row in the combined report: its selection and its
/// test-split evaluation.
fn router_entry(
    selection: &SelectionResult,
    test: &[InferenceRecord],
    cost_model: CostModel,
) -> Result<serde_json::Value> {
    let report: CascadeReport = evaluate_cascade(&selection.policy, test, cost_model)?;
    Ok(json!({ "selection": selection, "test": report }))
}

/// One routing request on the serve stream.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServeRequest {
    id: String,
    tokens: Vec<TokenStats>,
}

/// One routing decision on the serve stream. `score` is the value the
/// policy thresholds on; `p_hat` repeats it when that value is a
/// calibrated error probability.
#[derive(Debug, Serialize)]
struct ServeResponse<'a> {
    id: &'a str,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_hat: Option<f64>,
    decision: &'static str,
}

pub fn serve(args: ServeArgs) -> Result<ExitCode> {
    let policy = load_policy(&args.policy)?;
    let stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    for (number, line) in stdin.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: "<stdin>".into(),
            source,
        })?;
        let reply = match decide(&policy, &line) {
            Ok(value) => value,
            Err(message) => json!({ "error": message, "line": number + 1 }),
        };
        // One response line per request line, flushed before the next
        // request is read.
        match writeln!(stdout, "{reply}").and_then(|()| stdout.flush()) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::BrokenPipe => return Ok(ExitCode::SUCCESS),
            Err(source) => return Err(stdout_error(source)),
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Scores one request line against the policy. The error is a plain
/// message; the caller attaches the line number.
fn decide(policy: &RoutingPolicy, line: &str) -> std::result::Result<serde_json::Value, String> {
    let request: ServeRequest = serde_json::from_str(line).map_err(|e| e.to_string())?;
    // Borrow the record-level invariants: a request is a record with no
    // outputs attached.
    let record = InferenceRecord {
        id: request.id,
        small_tokens: request.tokens,
        small_output: EntityMap::new(),
        large_output: EntityMap::new(),
        gold: EntityMap::new(),
    };
    record.validate(&[]).map_err(|e| e.to_string())?;
    let score = policy.score_tokens(&record.small_tokens).map_err(|e| e.to_string())?;
    let p_hat = matches!(policy.score_source(), ScoreSource::CalibratedP(_)).then_some(score);
    let decision = match policy.decision_for_score(score) {
        ModelKind::Small => "small",
        ModelKind::Large => "large",
    };
    Ok(serde_json::to_value(ServeResponse {
        id: &record.id,
        score,
        p_hat,
        decision,
    })
    .expect("response serializes"))
}

pub fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let results = run_default_verification(args.seed)?;
    let mut stdout = std::io::stdout().lock();
    for result in &results {
        let line = serde_json::to_string(result).expect("property result serializes");
        match writeln!(stdout, "{line}") {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::BrokenPipe => break,
            Err(source) => return Err(stdout_error(source)),
        }
    }
    let passed = results.iter().filter(|r| r.passed).count();
    eprintln!("{passed}/{} properties passed", results.len());
    if passed == results.len() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(4))
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

/// The active cost model: `--cost-ratio r` means costs (1, r).
fn cost_model_for(config: &RunConfig, ratio: Option<f64>) -> Result<CostModel> {
    let model = match ratio {
        Some(large_cost) => CostModel {
            small_cost: 1.0,
            large_cost,
        },
        None => config.cost_model(),
    };
    model.validate()?;
    Ok(model)
}

fn tau_for(config: &RunConfig, tau: Option<f64>) -> Result<f64> {
    let tau = tau.unwrap_or(config.accuracy_target);
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!(
            "accuracy target must lie in [0, 1] (got {tau})"
        )));
    }
    Ok(tau)
}

fn pretty(value: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("documents serialize");
    text.push('\n');
    text
}

/// Writes the payload to the given path, or to standard output.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            let written = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush());
            match written {
                // A downstream `head` closing the pipe is a normal way to
                // consume these streams, not a failure.
                Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
                other => other.map_err(stdout_error),
            }
        }
    }
}

fn stdout_error(source: std::io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        source,
    }
}
