//! Self-contained property checks against independent oracles.
//!
//! Each check either reproduces a pipeline result with an exhaustive or
//! analytically known reference, or measures a Monte-Carlo quantity with
//! a stated tolerance. A check that runs but finds the property violated
//! reports `passed: false`; hard failures (I/O, degenerate inputs) come
//! back as errors instead. The `verify` command runs the whole suite and
//! exits nonzero if anything fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    expected_calibration_error, fit_isotonic, fit_temperature, CalibrationModel, IsotonicModel,
};
use crate::datamodel::{
    derive_correctness, derive_match_counts, split_dataset, CostModel, EntityMap, InferenceRecord,
    MatchCounts, ModelKind, TokenStats,
};
use crate::error::{Error, Result};
use crate::evaluation::{assumption_ii_diagnostic, evaluate_cascade};
use crate::routing::{
    build_entropy_baseline, build_frugal_baseline, conformal_quantile, select_conformal,
    select_threshold, RoutingPolicy, ScoreSource, SelectionResult,
};
use crate::synthetic::{
    brute_force_optimal_policy, falsification_experiment, rate_experiment, sample_error_pairs,
    SyntheticSpec,
};
use crate::uncertainty::{score_records, SignalKind};

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

impl PropertyResult {
    fn new(name: &str, passed: bool, details: String) -> Self {
        PropertyResult { name: name.to_string(), passed, details }
    }
}

// Check-local ChaCha streams, far above the generator's auxiliary base
// so verification draws never collide with workload draws.
const STREAM_ISOTONIC: u64 = 41 << 40;
const STREAM_SELECTION: u64 = 42 << 40;
const STREAM_CONFORMAL: u64 = 43 << 40;
const STREAM_TIES: u64 = 44 << 40;

/// Exhaustive monotone least-squares: enumerate every contiguous
/// partition of the distinct-u groups, keep those with non-decreasing
/// weighted block means, and take the minimum squared error. The
/// squared-error objective is strictly convex, so the optimal fitted
/// vector is unique even when several partitions attain it.
fn exhaustive_monotone_fit(u: &[f64], e: &[u8]) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = u.iter().copied().zip(e.iter().map(|&x| x as f64)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // pool exact ties up front; a fitted function cannot split them
    let mut groups: Vec<(f64, f64, f64)> = Vec::new(); // (u, sum, weight)
    for (x, y) in pairs {
        match groups.last_mut() {
            Some((gx, sum, w)) if *gx == x => {
                *sum += y;
                *w += 1.0;
            }
            _ => groups.push((x, y, 1.0)),
        }
    }
    let m = groups.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    // bit i of the mask cuts between group i and i + 1
    for mask in 0u32..(1u32 << (m - 1)) {
        let mut fitted = Vec::with_capacity(m);
        let mut start = 0;
        let mut monotone = true;
        let mut last_mean = f64::NEG_INFINITY;
        for i in 0..m {
            let cut = i == m - 1 || mask >> i & 1 == 1;
            if !cut {
                continue;
            }
            let block = &groups[start..=i];
            let weight: f64 = block.iter().map(|g| g.2).sum();
            let mean = block.iter().map(|g| g.1).sum::<f64>() / weight;
            if mean < last_mean {
                monotone = false;
                break;
            }
            last_mean = mean;
            for _ in start..=i {
                fitted.push(mean);
            }
            start = i + 1;
        }
        if !monotone {
            continue;
        }
        let sse: f64 = groups
            .iter()
            .zip(&fitted)
            .map(|((_, sum, w), &f)| {
                // expand sum over the group's unit-weight points
                let mean = sum / w;
                w * (mean - f).powi(2) + (sum / w) * (1.0 - sum / w) * w
            })
            .sum();
        if best.as_ref().is_none_or(|(best_sse, _)| sse < *best_sse) {
            best = Some((sse, fitted));
        }
    }
    let fitted = best.expect("the single-block partition is always monotone").1;
    groups.iter().map(|g| g.0).zip(fitted).collect()
}

/// Compares the pooled-adjacent-violators fit against exhaustive
/// monotone least-squares on random small instances, including tied
/// inputs and adversarially decreasing label patterns.
pub fn isotonic_oracle_check(instances: usize, seed: u64) -> Result<PropertyResult> {
    if instances == 0 {
        return Err(Error::EmptyInput("the oracle check needs at least one instance"));
    }
    let mut worst: f64 = 0.0;
    for idx in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_ISOTONIC + idx as u64);
        let n = rng.random_range(2..=12);
        let snap = rng.random_bool(0.3);
        let mut u = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x: f64 = rng.random();
            if snap {
                x = (x * 4.0).floor() / 4.0;
            }
            // mix calibrated, flat, and anti-monotone label regimes
            let p = match idx % 3 {
                0 => x,
                1 => 0.5,
                _ => 1.0 - x,
            };
            u.push(x);
            e.push(u8::from(rng.random_bool(p)));
        }
        let model = fit_isotonic(&u, &e)?;
        for (x, reference) in exhaustive_monotone_fit(&u, &e) {
            let diff = (model.predict(x) - reference).abs();
            worst = worst.max(diff);
        }
    }
    Ok(PropertyResult::new(
        "isotonic-oracle-equivalence",
        worst <= 1e-9,
        format!("{instances} instances, worst fitted-value deviation {worst:.3e}"),
    ))
}

fn toy_record(i: usize, u: f64, e_small: bool, e_large: bool) -> InferenceRecord {
    let gold: EntityMap = [("camera", format!("v-{i}"))].into_iter().collect();
    let wrong = |prefix: &str| -> EntityMap {
        [("camera", format!("{prefix}-wrong-{i}"))].into_iter().collect()
    };
    InferenceRecord {
        id: format!("toy-{i}"),
        small_tokens: vec![TokenStats {
            top1_prob: 1.0 - u / 2.0,
            top2_prob: u / 2.0,
            entropy: None,
        }],
        small_output: if e_small { wrong("s") } else { gold.clone() },
        large_output: if e_large { wrong("l") } else { gold.clone() },
        gold,
    }
}

/// Pooled cost and feasibility of escalating the top `k` records by
/// score.
fn suffix_cost(
    sorted_small: &[MatchCounts],
    sorted_large: &[MatchCounts],
    k: usize,
    cost_model: CostModel,
    tau: f64,
) -> (f64, bool) {
    let n = sorted_small.len();
    let mut counts = MatchCounts::default();
    for &c in &sorted_small[..n - k] {
        counts += c;
    }
    for &c in &sorted_large[n - k..] {
        counts += c;
    }
    let phi = k as f64 / n as f64;
    let cost = (1.0 - phi) * cost_model.small_cost + phi * cost_model.large_cost;
    (cost, counts.f1() >= tau)
}

/// Threshold selection versus two exhaustive oracles on random toy
/// instances with independent large-model correctness.
///
/// Always: the sweep's cost equals the best cost among the n + 1
/// score-ordered suffix subsets. Additionally, whenever realized errors
/// are separated by score (every record the small model missed scores
/// strictly above every record it got right) and the large model is
/// correct on all missed records, the sweep must also equal the
/// unrestricted 2^n subset optimum. Half the instances are constructed
/// inside that separated regime to keep it exercised.
pub fn selection_oracle_check(instances: usize, seed: u64) -> Result<PropertyResult> {
    if instances == 0 {
        return Err(Error::EmptyInput("the selection check needs at least one instance"));
    }
    let cost_model = CostModel::default();
    let mut separated_hits = 0usize;
    let mut upper_mismatches = 0usize;
    let mut unrestricted_mismatches = 0usize;
    let mut worst_gap: f64 = 0.0;
    for idx in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_SELECTION + idx as u64);
        let n = rng.random_range(2..=12);
        let mut u: Vec<f64>;
        loop {
            u = (0..n).map(|_| rng.random()).collect();
            let mut sorted = u.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).all(|w| w[0] < w[1]) {
                break;
            }
        }
        let constructed_separated = idx % 2 == 0;
        let records: Vec<InferenceRecord> = if constructed_separated {
            let cut: f64 = rng.random();
            u.iter()
                .enumerate()
                .map(|(i, &x)| toy_record(i, x, x > cut, false))
                .collect()
        } else {
            u.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let rate = 1.0 / (1.0 + (-(3.0 * x - 1.5)).exp());
                    let e_small = rng.random_bool(rate);
                    let e_large = rng.random_bool(0.1);
                    toy_record(i, x, e_small, e_large)
                })
                .collect()
        };
        let tau = 0.55 + 0.43 * rng.random::<f64>();

        let selected = select_threshold(&records, &u, ScoreSource::RawMargin, cost_model, tau)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
        let sorted_small: Vec<MatchCounts> = order
            .iter()
            .map(|&i| derive_match_counts(&records[i], ModelKind::Small))
            .collect();
        let sorted_large: Vec<MatchCounts> = order
            .iter()
            .map(|&i| derive_match_counts(&records[i], ModelKind::Large))
            .collect();
        let upper_best = (0..=n)
            .map(|k| suffix_cost(&sorted_small, &sorted_large, k, cost_model, tau))
            .filter(|&(_, feasible)| feasible)
            .map(|(cost, _)| cost)
            .min_by(f64::total_cmp);
        match (selected.feasible, upper_best) {
            (true, Some(cost)) => {
                let gap = (selected.validation_cost - cost).abs();
                worst_gap = worst_gap.max(gap);
                if gap > 1e-9 {
                    upper_mismatches += 1;
                }
            }
            (false, None) => {}
            _ => upper_mismatches += 1,
        }

        let wrong: Vec<usize> = (0..n)
            .filter(|&i| derive_correctness(&records[i], ModelKind::Small) == 1)
            .collect();
        let max_correct_u = (0..n)
            .filter(|i| !wrong.contains(i))
            .map(|i| u[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let separated = wrong.iter().all(|&i| u[i] > max_correct_u)
            && wrong
                .iter()
                .all(|&i| derive_correctness(&records[i], ModelKind::Large) == 0);
        if separated {
            separated_hits += 1;
            match brute_force_optimal_policy(&records, cost_model, tau)? {
                Some((oracle_cost, _)) => {
                    let gap = (selected.validation_cost - oracle_cost).abs();
                    worst_gap = worst_gap.max(gap);
                    if !selected.feasible || gap > 1e-9 {
                        unrestricted_mismatches += 1;
                    }
                }
                None => {
                    if selected.feasible {
                        unrestricted_mismatches += 1;
                    }
                }
            }
        }
    }
    let passed = upper_mismatches == 0 && unrestricted_mismatches == 0 && separated_hits > 0;
    Ok(PropertyResult::new(
        "upper-set-selection-optimality",
        passed,
        format!(
            "{instances} instances, {separated_hits} in the separated regime, \
             {upper_mismatches} suffix-oracle mismatches, \
             {unrestricted_mismatches} subset-oracle mismatches, worst gap {worst_gap:.3e}"
        ),
    ))
}

/// Held-out calibration error must shrink with training size at a
/// power-law rate: the log-log slope over the grid has to land in
/// [-0.5, -0.2].
pub fn calibration_rate_check(
    spec: &SyntheticSpec,
    n_grid: &[usize],
    trials: usize,
) -> Result<PropertyResult> {
    let table = rate_experiment(spec, n_grid, trials)?;
    let passed = (-0.5..=-0.2).contains(&table.slope);
    let points: Vec<String> = table
        .points
        .iter()
        .map(|p| format!("n={} ece={:.4}", p.n, p.mean_ece))
        .collect();
    Ok(PropertyResult::new(
        "calibration-learning-rate",
        passed,
        format!("slope {:.3}, {}", table.slope, points.join(", ")),
    ))
}

/// Isotonic calibration must at least halve the raw signal's held-out
/// ECE and beat single-parameter temperature scaling, with the map fit
/// on 22,500 records.
pub fn calibration_improvement_check(seed: u64) -> Result<PropertyResult> {
    let spec = SyntheticSpec::reference_workload(75_000, seed);
    let records = spec.generate()?;
    let (cal, _, test) = split_dataset(records, (0.3, 0.2, 0.5), spec.seed)?;
    let cal_u = score_records(&cal.records, SignalKind::Margin)?.values;
    let cal_e: Vec<u8> = cal
        .records
        .iter()
        .map(|r| derive_correctness(r, ModelKind::Small))
        .collect();
    let test_u = score_records(&test.records, SignalKind::Margin)?.values;
    let test_e: Vec<u8> = test
        .records
        .iter()
        .map(|r| derive_correctness(r, ModelKind::Small))
        .collect();

    let bins = 10;
    let before = expected_calibration_error(&test_u, &test_e, bins)?;
    let isotonic = fit_isotonic(&cal_u, &cal_e)?;
    let iso_pred: Vec<f64> = test_u.iter().map(|&u| isotonic.predict(u)).collect();
    let after = expected_calibration_error(&iso_pred, &test_e, bins)?;
    let temperature = fit_temperature(&cal_u, &cal_e)?;
    let temp_pred: Vec<f64> = test_u.iter().map(|&u| temperature.predict(u)).collect();
    let temp_ece = expected_calibration_error(&temp_pred, &test_e, bins)?;

    let passed = after <= 0.5 * before && after < temp_ece;
    Ok(PropertyResult::new(
        "calibration-improvement",
        passed,
        format!(
            "ECE raw {before:.4}, isotonic {after:.4}, temperature {temp_ece:.4} \
             (fit on {} records)",
            cal.records.len()
        ),
    ))
}

/// Everything the matched-workload comparison must deliver, for both the
/// check and the report command.
#[derive(Debug, Clone, Serialize)]
pub struct MatchedWorkloadRun {
    pub ucci: SelectionResult,
    pub entropy: SelectionResult,
    pub conformal: SelectionResult,
    pub frugal: SelectionResult,
    pub ucci_test_cost: f64,
    pub entropy_test_cost: f64,
    pub conformal_test_cost: f64,
    pub frugal_test_cost: f64,
    pub ucci_test_f1: f64,
}

/// Runs the full four-router comparison on the reference workload:
/// calibrate on the calibration split, select every router on the
/// validation split at tau = 0.91, evaluate on the test split.
pub fn matched_workload_run(seed: u64) -> Result<MatchedWorkloadRun> {
    let spec = SyntheticSpec::reference_workload(75_000, seed);
    let cost_model = CostModel::default();
    let tau = 0.91;
    let records = spec.generate()?;
    let (cal, val, test) = split_dataset(records, (0.3, 0.2, 0.5), spec.seed)?;

    let cal_u = score_records(&cal.records, SignalKind::Margin)?.values;
    let cal_e: Vec<u8> = cal
        .records
        .iter()
        .map(|r| derive_correctness(r, ModelKind::Small))
        .collect();
    let isotonic = fit_isotonic(&cal_u, &cal_e)?;
    let val_u = score_records(&val.records, SignalKind::Margin)?.values;
    let val_p: Vec<f64> = val_u.iter().map(|&u| isotonic.predict(u)).collect();

    let ucci = select_threshold(
        &val.records,
        &val_p,
        ScoreSource::CalibratedP(CalibrationModel::Isotonic(isotonic)),
        cost_model,
        tau,
    )?;
    let entropy = build_entropy_baseline(&val.records, cost_model, tau)?;
    let conformal = select_conformal(&cal.records, &cal_u, &val.records, &val_u, cost_model, tau)?;
    let frugal = build_frugal_baseline(&val.records, cost_model, tau)?;

    let eval = |policy: &RoutingPolicy| evaluate_cascade(policy, &test.records, cost_model);
    let ucci_report = eval(&ucci.policy)?;
    Ok(MatchedWorkloadRun {
        ucci_test_cost: ucci_report.total_cost,
        ucci_test_f1: ucci_report.micro_f1,
        entropy_test_cost: eval(&entropy.policy)?.total_cost,
        conformal_test_cost: eval(&conformal.policy)?.total_cost,
        frugal_test_cost: eval(&frugal.policy)?.total_cost,
        ucci,
        entropy,
        conformal,
        frugal,
    })
}

/// On the reference workload the calibrated router must beat paying for
/// the large model everywhere and must not lose to the entropy baseline;
/// every router either meets the accuracy target on validation or says
/// so.
pub fn matched_workload_check(seed: u64) -> Result<PropertyResult> {
    let run = matched_workload_run(seed)?;
    let tau = 0.91;
    let large_cost = CostModel::default().large_cost;
    let routers = [
        ("ucci", &run.ucci),
        ("entropy", &run.entropy),
        ("conformal", &run.conformal),
        ("frugal", &run.frugal),
    ];
    let honest = routers
        .iter()
        .all(|(_, r)| !r.feasible || r.validation_accuracy >= tau);
    let passed =
        run.ucci_test_cost < large_cost && run.ucci_test_cost <= run.entropy_test_cost && honest;
    Ok(PropertyResult::new(
        "matched-workload-ordering",
        passed,
        format!(
            "test costs: ucci {:.3}, conformal {:.3}, frugal {:.3}, entropy {:.3}, \
             large {large_cost}; ucci test F1 {:.4}; feasible: {}",
            run.ucci_test_cost,
            run.conformal_test_cost,
            run.frugal_test_cost,
            run.entropy_test_cost,
            run.ucci_test_f1,
            routers
                .iter()
                .map(|(name, r)| format!("{name}={}", r.feasible))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    ))
}

/// Split-conformal coverage at each miscoverage level, averaged over
/// independent trials: among records the small model answers correctly,
/// the fraction kept below the chosen quantile must reach 1 - delta
/// minus a 0.02 finite-sample allowance.
pub fn conformal_coverage_check(
    trials: usize,
    n: usize,
    deltas: &[f64],
    seed: u64,
) -> Result<PropertyResult> {
    if trials == 0 || n == 0 || deltas.is_empty() {
        return Err(Error::EmptyInput("the coverage check needs trials, records, and deltas"));
    }
    let spec = SyntheticSpec::reference_workload(10, seed);
    let stride = 2 * n as u64 + 16;
    let mut lines = Vec::with_capacity(deltas.len());
    let mut passed = true;
    let mut coverages = vec![0.0f64; deltas.len()];
    for t in 0..trials {
        let base = STREAM_CONFORMAL + t as u64 * stride;
        let (cal_u, cal_e) = sample_error_pairs(&spec, n, base)?;
        let (test_u, test_e) = sample_error_pairs(&spec, n, base + n as u64 + 8)?;
        let correct_cal: Vec<f64> = cal_u
            .iter()
            .zip(&cal_e)
            .filter(|(_, &e)| e == 0)
            .map(|(&u, _)| u)
            .collect();
        let correct_test: Vec<f64> = test_u
            .iter()
            .zip(&test_e)
            .filter(|(_, &e)| e == 0)
            .map(|(&u, _)| u)
            .collect();
        for (d, &delta) in deltas.iter().enumerate() {
            let threshold = conformal_quantile(&correct_cal, delta)?;
            let covered = correct_test.iter().filter(|&&u| u <= threshold).count();
            coverages[d] += covered as f64 / correct_test.len() as f64;
        }
    }
    for (d, &delta) in deltas.iter().enumerate() {
        let mean = coverages[d] / trials as f64;
        let ok = mean >= 1.0 - delta - 0.02;
        passed &= ok;
        lines.push(format!("delta {delta}: coverage {mean:.4} (need {:.4})", 1.0 - delta - 0.02));
    }
    Ok(PropertyResult::new(
        "conformal-coverage",
        passed,
        format!("{trials} trials at n = {n}: {}", lines.join("; ")),
    ))
}

/// Under the independent large model, the pipeline-selected policy's
/// escalated subset must show the same large-model F1 as the full split
/// to within 0.01 at n = 20,000.
pub fn independence_diagnostic_check(seed: u64) -> Result<PropertyResult> {
    let spec = SyntheticSpec::reference_workload(40_000, seed);
    let records = spec.generate()?;
    let (cal, val, test) = split_dataset(records, (0.3, 0.2, 0.5), spec.seed)?;
    let cal_u = score_records(&cal.records, SignalKind::Margin)?.values;
    let cal_e: Vec<u8> = cal
        .records
        .iter()
        .map(|r| derive_correctness(r, ModelKind::Small))
        .collect();
    let isotonic = fit_isotonic(&cal_u, &cal_e)?;
    let val_p: Vec<f64> = score_records(&val.records, SignalKind::Margin)?
        .values
        .iter()
        .map(|&u| isotonic.predict(u))
        .collect();
    let selected = select_threshold(
        &val.records,
        &val_p,
        ScoreSource::CalibratedP(CalibrationModel::Isotonic(isotonic)),
        CostModel::default(),
        0.91,
    )?;
    let diagnostic = assumption_ii_diagnostic(&selected.policy, &test.records)?;
    let passed = diagnostic.gap.abs() < 0.01;
    Ok(PropertyResult::new(
        "escalated-subset-independent",
        passed,
        format!(
            "large F1 on all {:.4} vs escalated {:.4}, |gap| {:.4} over {} records",
            diagnostic.f1_large_on_all,
            diagnostic.f1_large_on_escalated,
            diagnostic.gap.abs(),
            test.records.len()
        ),
    ))
}

/// With difficulty-correlated large errors (rho = 0.5) the same
/// diagnostic must light up: probing with a policy that escalates the
/// hardest fifth of records has to reveal a gap above 0.02.
pub fn correlated_diagnostic_check(seed: u64) -> Result<PropertyResult> {
    let mut spec = SyntheticSpec::reference_workload(20_000, seed);
    spec.large_mode = crate::synthetic::LargeMode::Correlated { rho: 0.5 };
    let records = spec.generate()?;
    let mut u = score_records(&records, SignalKind::Margin)?.values;
    u.sort_by(f64::total_cmp);
    let threshold = u[(records.len() as f64 * 0.8) as usize];
    let probe = RoutingPolicy::new(ScoreSource::RawMargin, threshold)?;
    let diagnostic = assumption_ii_diagnostic(&probe, &records)?;
    let passed = diagnostic.gap > 0.02;
    Ok(PropertyResult::new(
        "escalated-subset-correlated",
        passed,
        format!(
            "large F1 on all {:.4} vs escalated {:.4}, gap {:.4} at rho 0.5",
            diagnostic.f1_large_on_all, diagnostic.f1_large_on_escalated, diagnostic.gap
        ),
    ))
}

/// Contamination planting high-error records at low uncertainty must
/// hurt calibrated routing more than a true-rate oracle, and the mean
/// cost gap must grow strictly with the contaminated fraction.
pub fn contamination_check(trials: usize, n: usize, seed: u64) -> Result<PropertyResult> {
    let base = SyntheticSpec::reference_workload(10, seed);
    let points = falsification_experiment(
        &base,
        CostModel::default(),
        0.91,
        &[0.0, 0.05, 0.15],
        0.9,
        trials,
        n,
    )?;
    let increasing = points.windows(2).all(|w| w[0].mean_gap < w[1].mean_gap);
    let summary: Vec<String> = points
        .iter()
        .map(|p| format!("eps {}: gap {:.4}", p.epsilon, p.mean_gap))
        .collect();
    Ok(PropertyResult::new(
        "contamination-cost-gap",
        increasing,
        format!("{trials} trials at n = {n}: {}", summary.join(", ")),
    ))
}

/// Predictions must be constant between fitted breakpoints: records that
/// pool into the same block share one error estimate. Swapping in an
/// interpolating predictor is the designed way to make this fail.
pub fn level_set_tie_check(
    predict: impl Fn(&IsotonicModel, f64) -> f64,
    seed: u64,
) -> Result<PropertyResult> {
    let spec = SyntheticSpec::reference_workload(10, seed);
    let (u, e) = sample_error_pairs(&spec, 2_000, STREAM_TIES)?;
    let model = fit_isotonic(&u, &e)?;
    let breaks = model.breakpoints();
    if breaks.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: breaks.len() });
    }
    let mut violations = 0usize;
    let mut probes = 0usize;
    for pair in breaks.windows(2) {
        let anchor = predict(&model, pair[0]);
        for t in [0.25, 0.5, 0.75, 0.999] {
            let x = pair[0] + t * (pair[1] - pair[0]);
            probes += 1;
            if predict(&model, x) != anchor {
                violations += 1;
            }
        }
    }
    // below the first breakpoint the clamp must hold too
    let first = breaks[0];
    probes += 1;
    if predict(&model, first - 0.5) != predict(&model, first) {
        violations += 1;
    }
    Ok(PropertyResult::new(
        "level-set-ties",
        violations == 0,
        format!("{violations} of {probes} probes broke a level set ({} blocks)", breaks.len()),
    ))
}

/// The full suite at its standard scales. Runs in a few seconds.
pub fn run_default_verification(seed: u64) -> Result<Vec<PropertyResult>> {
    let rate_spec = SyntheticSpec::reference_workload(10, seed);
    Ok(vec![
        isotonic_oracle_check(500, seed)?,
        selection_oracle_check(200, seed)?,
        calibration_rate_check(&rate_spec, &[100, 1_000, 10_000, 100_000], 10)?,
        calibration_improvement_check(seed)?,
        matched_workload_check(seed)?,
        conformal_coverage_check(20, 10_000, &[0.05, 0.1, 0.2], seed)?,
        independence_diagnostic_check(seed)?,
        correlated_diagnostic_check(seed)?,
        contamination_check(20, 4_000, seed)?,
        level_set_tie_check(|model, x| model.predict(x), seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_fit_agrees_on_hand_example() {
        // the 4-point pooling example: values 0, 1, 0.5, 1.5 with a
        // violation between the middle points
        let u = [0.1, 0.2, 0.3, 0.4];
        let e = [0u8, 1, 0, 1];
        let fitted = exhaustive_monotone_fit(&u, &e);
        let expected = [0.0, 0.5, 0.5, 1.0];
        for ((_, got), want) in fitted.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn isotonic_oracle_check_passes_quickly() {
        let result = isotonic_oracle_check(60, 5).unwrap();
        assert!(result.passed, "{}", result.details);
    }

    #[test]
    fn selection_oracle_check_passes_quickly() {
        let result = selection_oracle_check(40, 5).unwrap();
        assert!(result.passed, "{}", result.details);
        assert!(result.details.contains("suffix-oracle"), "{}", result.details);
    }

    #[test]
    fn level_set_check_passes_for_the_real_predictor() {
        let result = level_set_tie_check(|model, x| model.predict(x), 3).unwrap();
        assert!(result.passed, "{}", result.details);
    }

    #[test]
    fn level_set_check_fails_for_an_interpolating_predictor() {
        let interpolating = |model: &IsotonicModel, x: f64| -> f64 {
            let breaks = model.breakpoints();
            let values = model.values();
            match breaks.iter().position(|&b| b > x) {
                Some(0) => values[0],
                Some(i) => {
                    let w = (x - breaks[i - 1]) / (breaks[i] - breaks[i - 1]);
                    values[i - 1] * (1.0 - w) + values[i] * w
                }
                None => *values.last().expect("fitted models are non-empty"),
            }
        };
        let result = level_set_tie_check(interpolating, 3).unwrap();
        assert!(!result.passed, "{}", result.details);
    }

    #[test]
    fn conformal_coverage_check_small_scale() {
        let result = conformal_coverage_check(5, 2_000, &[0.1, 0.2], 7).unwrap();
        assert!(result.passed, "{}", result.details);
    }

    #[test]
    fn correlated_diagnostic_flags_the_violation() {
        let result = correlated_diagnostic_check(11).unwrap();
        assert!(result.passed, "{}", result.details);
    }

    #[test]
    fn property_results_serialize() {
        let result = PropertyResult::new("demo", true, "ok".into());
        let text = serde_json::to_string(&result).unwrap();
        assert!(text.contains("\"passed\":true"));
        let back: PropertyResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, result);
    }
}
