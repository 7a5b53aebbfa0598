//! End-to-end cascade evaluation: routed micro-F1, cost accounting,
//! Pareto sweeps, bootstrap confidence intervals, cost-ratio sensitivity,
//! per-entity breakdowns, and the escalated-subset accuracy diagnostic.
//!
//! Every report here is a pure function of per-record routed outputs; no
//! model is re-invoked or simulated.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    derive_match_counts, entity_match_counts_by_type, CostModel, InferenceRecord, MatchCounts,
    ModelKind,
};
use crate::error::{Error, Result};
use crate::routing::{route, Direction, RoutingPolicy, SweepTable};

/// A compact, serializable description of what produced a report. Single
/// model evaluations carry no threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub score: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl PolicyDescriptor {
    pub fn from_policy(policy: &RoutingPolicy) -> Self {
        Self {
            score: policy.score_source().name().to_string(),
            direction: Some(policy.direction()),
            threshold: Some(policy.threshold()),
        }
    }

    pub fn single(model: ModelKind) -> Self {
        Self {
            score: match model {
                ModelKind::Small => "small_only".to_string(),
                ModelKind::Large => "large_only".to_string(),
            },
            direction: None,
            threshold: None,
        }
    }
}

/// The evaluated operating point of one policy on one record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub policy: PolicyDescriptor,
    /// Mean per-query cost in normalized units.
    pub total_cost: f64,
    pub micro_f1: f64,
    pub escalation_fraction: f64,
    /// Entity types with no support (no gold and no predictions) are
    /// omitted rather than reported as 0.
    pub per_entity_f1: BTreeMap<String, f64>,
    pub n: usize,
}

/// Micro-averaged F1 over a sequence of per-record counts.
pub fn micro_f1(counts: &[MatchCounts]) -> f64 {
    counts.iter().copied().sum::<MatchCounts>().f1()
}

/// Per-entity micro-F1 over routed outputs. Types with zero denominator
/// are omitted.
pub fn per_entity_report(
    records: &[InferenceRecord],
    decisions: &[ModelKind],
) -> BTreeMap<String, f64> {
    let mut totals: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for (record, &decision) in records.iter().zip(decisions) {
        for (entity, counts) in
            entity_match_counts_by_type(record.output(decision), &record.gold)
        {
            *totals.entry(entity).or_default() += counts;
        }
    }
    totals
        .into_iter()
        .filter(|(_, c)| 2 * c.true_pos + c.false_pos + c.false_neg > 0)
        .map(|(entity, c)| (entity, c.f1()))
        .collect()
}

/// Builds a report from already-routed decisions.
pub fn report_from_decisions(
    descriptor: PolicyDescriptor,
    records: &[InferenceRecord],
    decisions: &[ModelKind],
    cost_model: CostModel,
) -> Result<CascadeReport> {
    cost_model.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("evaluation needs at least one record"));
    }
    if records.len() != decisions.len() {
        return Err(Error::InvalidConfig(format!(
            "records and decisions must have equal lengths ({} vs {})",
            records.len(),
            decisions.len()
        )));
    }
    let mut counts = MatchCounts::default();
    let mut escalated = 0usize;
    for (record, &decision) in records.iter().zip(decisions) {
        counts += derive_match_counts(record, decision);
        if decision == ModelKind::Large {
            escalated += 1;
        }
    }
    let n = records.len();
    let phi = escalated as f64 / n as f64;
    Ok(CascadeReport {
        policy: descriptor,
        total_cost: (1.0 - phi) * cost_model.small_cost + phi * cost_model.large_cost,
        micro_f1: counts.f1(),
        escalation_fraction: phi,
        per_entity_f1: per_entity_report(records, decisions),
        n,
    })
}

/// Routes every record and evaluates the served outputs.
pub fn evaluate_cascade(
    policy: &RoutingPolicy,
    records: &[InferenceRecord],
    cost_model: CostModel,
) -> Result<CascadeReport> {
    let mut decisions = Vec::with_capacity(records.len());
    for record in records {
        decisions.push(route(policy, record)?);
    }
    report_from_decisions(
        PolicyDescriptor::from_policy(policy),
        records,
        &decisions,
        cost_model,
    )
}

/// Evaluates one model on every record, with no routing machinery
/// involved. Serves as the independent reference for the cascade's
/// degenerate policies.
pub fn evaluate_single(
    records: &[InferenceRecord],
    model: ModelKind,
    cost_model: CostModel,
) -> Result<CascadeReport> {
    cost_model.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("evaluation needs at least one record"));
    }
    let mut counts = MatchCounts::default();
    let mut per_entity: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for record in records {
        counts += derive_match_counts(record, model);
        for (entity, c) in entity_match_counts_by_type(record.output(model), &record.gold) {
            *per_entity.entry(entity).or_default() += c;
        }
    }
    let phi = match model {
        ModelKind::Small => 0.0,
        ModelKind::Large => 1.0,
    };
    Ok(CascadeReport {
        policy: PolicyDescriptor::single(model),
        total_cost: (1.0 - phi) * cost_model.small_cost + phi * cost_model.large_cost,
        micro_f1: counts.f1(),
        escalation_fraction: phi,
        per_entity_f1: per_entity
            .into_iter()
            .filter(|(_, c)| 2 * c.true_pos + c.false_pos + c.false_neg > 0)
            .map(|(entity, c)| (entity, c.f1()))
            .collect(),
        n: records.len(),
    })
}

/// One operating point along a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub threshold: f64,
    pub cost: f64,
    pub micro_f1: f64,
}

/// The cost/accuracy curve traced by sweeping the threshold, sorted by
/// cost. Its cheap endpoint is the small-only report and its expensive
/// endpoint the large-only report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCurve {
    pub points: Vec<ParetoPoint>,
}

impl ParetoCurve {
    /// Plot-ready CSV, one row per point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,cost,micro_f1\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.cost, p.micro_f1));
        }
        out
    }
}

/// Sweeps every candidate threshold over uncertainty-oriented scores.
/// Thresholds inducing identical escalation sets collapse to one point
/// (the lowest such threshold).
pub fn pareto_sweep(
    records: &[InferenceRecord],
    scores: &[f64],
    cost_model: CostModel,
) -> Result<ParetoCurve> {
    cost_model.validate()?;
    let table = SweepTable::new(records, scores)?;
    let mut points: Vec<ParetoPoint> = Vec::new();
    let mut seen_escalations: Option<usize> = None;
    for theta in table.candidates() {
        let (cost, f1, escalated) = table.evaluate(theta, Direction::EscalateIfAbove, cost_model);
        if seen_escalations == Some(escalated) {
            continue;
        }
        seen_escalations = Some(escalated);
        points.push(ParetoPoint {
            threshold: theta,
            cost,
            micro_f1: f1,
        });
    }
    points.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    Ok(ParetoCurve { points })
}

/// Which scalar the bootstrap resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Cost,
    MicroF1,
    CostSavingVsLarge,
}

/// A percentile-bootstrap interval. `point` is the statistic on the full
/// record set, not a resample.
///
/// With a single resample the interval degenerates to that resample's
/// statistic, which may sit on either side of `point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

struct RoutedRecord {
    cost: f64,
    counts: MatchCounts,
}

fn resample_statistic(
    routed: &[RoutedRecord],
    indices: impl Iterator<Item = usize>,
    statistic: Statistic,
    cost_model: CostModel,
) -> f64 {
    let mut cost_sum = 0.0;
    let mut counts = MatchCounts::default();
    let mut n = 0usize;
    for i in indices {
        cost_sum += routed[i].cost;
        counts += routed[i].counts;
        n += 1;
    }
    let mean_cost = cost_sum / n as f64;
    match statistic {
        Statistic::Cost => mean_cost,
        Statistic::MicroF1 => counts.f1(),
        Statistic::CostSavingVsLarge => 1.0 - mean_cost / cost_model.large_cost,
    }
}

/// Percentile bootstrap over queries at the default 0.95 level.
pub fn bootstrap_ci(
    records: &[InferenceRecord],
    policy: &RoutingPolicy,
    cost_model: CostModel,
    statistic: Statistic,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCI> {
    bootstrap_ci_with_level(records, policy, cost_model, statistic, resamples, seed, 0.95)
}

/// Percentile bootstrap over queries: records are resampled with
/// replacement and the statistic recomputed from routed outputs per
/// resample. Resample `b` draws from an independent deterministic stream,
/// so results are reproducible and insensitive to evaluation order.
pub fn bootstrap_ci_with_level(
    records: &[InferenceRecord],
    policy: &RoutingPolicy,
    cost_model: CostModel,
    statistic: Statistic,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapCI> {
    cost_model.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("bootstrap needs at least one record"));
    }
    if resamples < 1 {
        return Err(Error::InvalidConfig("bootstrap needs at least one resample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must lie in (0, 1) (got {level})"
        )));
    }

    let mut routed = Vec::with_capacity(records.len());
    for record in records {
        let decision = route(policy, record)?;
        routed.push(RoutedRecord {
            cost: match decision {
                ModelKind::Small => cost_model.small_cost,
                ModelKind::Large => cost_model.large_cost,
            },
            counts: derive_match_counts(record, decision),
        });
    }

    let n = routed.len();
    let point = resample_statistic(&routed, 0..n, statistic, cost_model);

    let mut stats = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64 + 1);
        let indices = (0..n).map(|_| rng.random_range(0..n));
        stats.push(resample_statistic(&routed, indices, statistic, cost_model));
    }
    stats.sort_by(f64::total_cmp);

    // 1-indexed ceil(q * B) order statistic, nudged so exact products do
    // not round up
    let pick = |q: f64| -> f64 {
        let rank = ((resamples as f64 * q) - 1e-9).ceil() as usize;
        stats[rank.clamp(1, resamples) - 1]
    };
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCI {
        point,
        lower: pick(tail),
        upper: pick(1.0 - tail),
        level,
        resamples,
        seed,
    })
}

/// One re-priced row of the cost-sensitivity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSensitivityRow {
    pub ratio: f64,
    pub cost: f64,
    pub saving_vs_large: f64,
}

/// Re-prices a fixed escalation fraction under different cost ratios:
/// cost = (1-φ) + φ·r in units of the small model, saving = 1 - cost/r.
pub fn cost_sensitivity_phi(phi: f64, ratios: &[f64]) -> Result<Vec<CostSensitivityRow>> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidConfig(format!(
            "escalation fraction must lie in [0, 1] (got {phi})"
        )));
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        if !ratio.is_finite() || ratio <= 1.0 {
            return Err(Error::BadCostRatio(ratio));
        }
        let cost = (1.0 - phi) + phi * ratio;
        rows.push(CostSensitivityRow {
            ratio,
            cost,
            saving_vs_large: 1.0 - cost / ratio,
        });
    }
    Ok(rows)
}

/// [`cost_sensitivity_phi`] over already-routed decisions.
pub fn cost_sensitivity(
    decisions: &[ModelKind],
    ratios: &[f64],
) -> Result<Vec<CostSensitivityRow>> {
    if decisions.is_empty() {
        return Err(Error::EmptyInput("cost sensitivity needs at least one decision"));
    }
    let escalated = decisions.iter().filter(|&&d| d == ModelKind::Large).count();
    cost_sensitivity_phi(escalated as f64 / decisions.len() as f64, ratios)
}

/// The large model's accuracy on the queries a policy actually escalates,
/// next to its accuracy everywhere. A positive gap means escalated
/// queries are harder for the large model too.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscalatedSubsetDiagnostic {
    pub f1_large_on_escalated: f64,
    pub f1_large_on_all: f64,
    pub gap: f64,
}

/// Compares the large model's micro-F1 on the escalated subset with the
/// full split. Fails when the policy escalates nothing.
pub fn assumption_ii_diagnostic(
    policy: &RoutingPolicy,
    records: &[InferenceRecord],
) -> Result<EscalatedSubsetDiagnostic> {
    if records.is_empty() {
        return Err(Error::EmptyInput("diagnostic needs at least one record"));
    }
    let mut escalated = MatchCounts::default();
    let mut all = MatchCounts::default();
    let mut any_escalated = false;
    for record in records {
        let counts = derive_match_counts(record, ModelKind::Large);
        all += counts;
        if route(policy, record)? == ModelKind::Large {
            escalated += counts;
            any_escalated = true;
        }
    }
    if !any_escalated {
        return Err(Error::DiagnosticUndefined);
    }
    let f1_escalated = escalated.f1();
    let f1_all = all.f1();
    Ok(EscalatedSubsetDiagnostic {
        f1_large_on_escalated: f1_escalated,
        f1_large_on_all: f1_all,
        gap: f1_all - f1_escalated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{derive_correctness, EntityMap, TokenStats};
    use crate::routing::ScoreSource;
    use approx::assert_abs_diff_eq;

    /// Record with a controlled margin uncertainty `u` (single token) and
    /// per-model correctness.
    fn toy_u(id: &str, u: f64, small_ok: bool, large_ok: bool) -> InferenceRecord {
        let gold: EntityMap = [("camera", "gold")].into_iter().collect();
        let wrong: EntityMap = [("camera", "wrong")].into_iter().collect();
        InferenceRecord {
            id: id.to_string(),
            small_tokens: vec![TokenStats::new(1.0 - u / 2.0, u / 2.0, Some(u))],
            small_output: if small_ok { gold.clone() } else { wrong.clone() },
            large_output: if large_ok { gold.clone() } else { wrong },
            gold,
        }
    }

    fn cm() -> CostModel {
        CostModel::default()
    }

    fn fixture() -> Vec<InferenceRecord> {
        vec![
            toy_u("a", 0.05, true, true),
            toy_u("b", 0.25, true, true),
            toy_u("c", 0.55, false, true),
            toy_u("d", 0.75, false, true),
            toy_u("e", 0.95, false, false),
        ]
    }

    fn measured_fields(r: &CascadeReport) -> (f64, f64, f64, BTreeMap<String, f64>, usize) {
        (
            r.total_cost,
            r.micro_f1,
            r.escalation_fraction,
            r.per_entity_f1.clone(),
            r.n,
        )
    }

    #[test]
    fn keep_all_equals_small_only_field_for_field() {
        let records = fixture();
        let cascade = evaluate_cascade(&RoutingPolicy::keep_all(), &records, cm()).unwrap();
        let single = evaluate_single(&records, ModelKind::Small, cm()).unwrap();
        assert_eq!(measured_fields(&cascade), measured_fields(&single));
        assert_abs_diff_eq!(cascade.total_cost, 1.0);
    }

    #[test]
    fn escalate_all_equals_large_only_field_for_field() {
        let records = fixture();
        let cascade = evaluate_cascade(&RoutingPolicy::escalate_all(), &records, cm()).unwrap();
        let single = evaluate_single(&records, ModelKind::Large, cm()).unwrap();
        assert_eq!(measured_fields(&cascade), measured_fields(&single));
        assert_abs_diff_eq!(cascade.total_cost, 3.02);
    }

    #[test]
    fn three_record_hand_computation() {
        let mut records = vec![
            toy_u("r1", 0.2, true, true),
            toy_u("r2", 0.7, false, true),
            toy_u("r3", 0.9, false, true),
        ];
        // r3: small misses the only gold entity instead of mismatching it
        records[2].small_output = EntityMap::new();
        records[2].gold = [("iso", "800")].into_iter().collect();
        records[2].large_output = records[2].gold.clone();

        let policy = RoutingPolicy::new(ScoreSource::RawMargin, 0.5).unwrap();
        let report = evaluate_cascade(&policy, &records, cm()).unwrap();
        // r1 stays small (correct); r2, r3 escalate (both large-correct)
        assert_abs_diff_eq!(report.micro_f1, 1.0);
        assert_abs_diff_eq!(report.escalation_fraction, 2.0 / 3.0, epsilon = 1e-12);
        let expected_cost = (1.0 / 3.0) * 1.0 + (2.0 / 3.0) * 3.02;
        assert_abs_diff_eq!(report.total_cost, expected_cost, epsilon = 1e-12);
        assert_eq!(report.n, 3);
        assert_abs_diff_eq!(report.per_entity_f1["camera"], 1.0);
        assert_abs_diff_eq!(report.per_entity_f1["iso"], 1.0);
    }

    #[test]
    fn cost_decomposition_holds_exactly() {
        let records = fixture();
        for theta in [-1.0, 0.1, 0.3, 0.6, 0.8, 1.0] {
            let policy = RoutingPolicy::new(ScoreSource::RawMargin, theta).unwrap();
            let r = evaluate_cascade(&policy, &records, cm()).unwrap();
            let recomposed =
                (1.0 - r.escalation_fraction) * 1.0 + r.escalation_fraction * 3.02;
            assert!((r.total_cost - recomposed).abs() < 1e-9);
        }
    }

    #[test]
    fn micro_f1_examples() {
        let c = |t, p, n| MatchCounts {
            true_pos: t,
            false_pos: p,
            false_neg: n,
        };
        assert_abs_diff_eq!(micro_f1(&[c(1, 1, 1)]), 0.5);
        assert_abs_diff_eq!(micro_f1(&[c(3, 0, 0), c(2, 0, 0)]), 1.0);
        assert_abs_diff_eq!(micro_f1(&[c(0, 0, 0)]), 0.0);
    }

    #[test]
    fn pareto_constant_scores_two_points() {
        let records = fixture();
        let scores = [0.4; 5];
        let curve = pareto_sweep(&records, &scores, cm()).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_abs_diff_eq!(curve.points[0].cost, 1.0);
        assert_abs_diff_eq!(curve.points[1].cost, 3.02);
    }

    #[test]
    fn pareto_endpoints_match_single_model_reports() {
        let records = fixture();
        let scores: Vec<f64> = ScoreSource::RawMargin.score_records(&records).unwrap();
        let curve = pareto_sweep(&records, &scores, cm()).unwrap();
        let small = evaluate_single(&records, ModelKind::Small, cm()).unwrap();
        let large = evaluate_single(&records, ModelKind::Large, cm()).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.cost, first.micro_f1), (small.total_cost, small.micro_f1));
        assert_eq!((last.cost, last.micro_f1), (large.total_cost, large.micro_f1));
        // one point per distinct escalation count: 5 distinct scores + keep-all
        assert_eq!(curve.points.len(), 6);
        // sorted by cost
        for pair in curve.points.windows(2) {
            assert!(pair[0].cost <= pair[1].cost);
        }
    }

    #[test]
    fn pareto_csv_shape() {
        let records = fixture();
        let scores = [0.4; 5];
        let csv = pareto_sweep(&records, &scores, cm()).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,cost,micro_f1");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn sweep_monotone_in_theta() {
        let records = fixture();
        let scores: Vec<f64> = ScoreSource::RawMargin.score_records(&records).unwrap();
        let table = SweepTable::new(&records, &scores).unwrap();
        let mut prev_cost = f64::INFINITY;
        let mut prev_phi = f64::INFINITY;
        for theta in table.candidates() {
            let (cost, _, escalated) =
                table.evaluate(theta, Direction::EscalateIfAbove, cm());
            let phi = escalated as f64 / records.len() as f64;
            assert!(cost <= prev_cost + 1e-15);
            assert!(phi <= prev_phi);
            prev_cost = cost;
            prev_phi = phi;
        }
    }

    #[test]
    fn bootstrap_single_resample_degenerates() {
        let records = fixture();
        let ci = bootstrap_ci(
            &records,
            &RoutingPolicy::keep_all(),
            cm(),
            Statistic::MicroF1,
            1,
            9,
        )
        .unwrap();
        assert_eq!(ci.lower, ci.upper);
        assert!(ci.lower.is_finite());
        assert_eq!(ci.resamples, 1);
    }

    #[test]
    fn bootstrap_identical_records_zero_width() {
        let records: Vec<InferenceRecord> = (0..50)
            .map(|i| toy_u(&format!("r{i}"), 0.3, true, true))
            .collect();
        let ci = bootstrap_ci(
            &records,
            &RoutingPolicy::keep_all(),
            cm(),
            Statistic::Cost,
            200,
            4,
        )
        .unwrap();
        assert_eq!(ci.lower, ci.point);
        assert_eq!(ci.upper, ci.point);
    }

    #[test]
    fn bootstrap_deterministic_under_seed() {
        let records = fixture();
        let run = |seed| {
            bootstrap_ci(
                &records,
                &RoutingPolicy::escalate_all(),
                cm(),
                Statistic::MicroF1,
                64,
                seed,
            )
            .unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    fn bernoulli_records(n: usize) -> Vec<InferenceRecord> {
        // exactly half correct, so micro-F1 over single-entity records is
        // the resampled fraction correct
        (0..n)
            .map(|i| toy_u(&format!("r{i}"), 0.5, i % 2 == 0, true))
            .collect()
    }

    #[test]
    fn bootstrap_width_matches_binomial() {
        let records = bernoulli_records(10_000);
        let ci = bootstrap_ci(
            &records,
            &RoutingPolicy::keep_all(),
            cm(),
            Statistic::MicroF1,
            1000,
            3,
        )
        .unwrap();
        let width = ci.upper - ci.lower;
        // analytic: 2 * 1.96 * sqrt(0.25 / 10000) = 0.0196
        assert!(
            (0.015..=0.025).contains(&width),
            "width {width} outside the binomial band"
        );
        assert!(ci.lower <= ci.point && ci.point <= ci.upper);
    }

    #[test]
    fn bootstrap_width_shrinks_with_n() {
        let small = bernoulli_records(2_500);
        let big = bernoulli_records(10_000);
        let width = |records: &[InferenceRecord]| {
            let ci = bootstrap_ci(
                records,
                &RoutingPolicy::keep_all(),
                cm(),
                Statistic::MicroF1,
                800,
                17,
            )
            .unwrap();
            ci.upper - ci.lower
        };
        let ratio = width(&big) / width(&small);
        assert!(
            (0.4..=0.6).contains(&ratio),
            "width ratio {ratio} outside [0.4, 0.6]"
        );
    }

    #[test]
    // the 3.14 below is a re-priced cost, not the circle constant
    #[allow(clippy::approx_constant)]
    fn cost_sensitivity_rows() {
        // escalation fraction implied by the reference operating point
        let phi = (2.08 - 1.0) / (3.02 - 1.0);
        let rows = cost_sensitivity_phi(phi, &[3.02, 5.0, 10.0]).unwrap();
        assert_abs_diff_eq!(rows[0].cost, 2.08, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0].saving_vs_large, 1.0 - 2.08 / 3.02, epsilon = 1e-12);
        assert!((rows[1].cost - 3.14).abs() < 5e-3);
        assert!((rows[1].saving_vs_large - 0.37).abs() < 5e-3);
        assert!((rows[2].cost - 5.81).abs() < 5e-3);
        assert!((rows[2].saving_vs_large - 0.42).abs() < 5e-3);

        let zero = cost_sensitivity_phi(0.0, &[4.0]).unwrap();
        assert_abs_diff_eq!(zero[0].cost, 1.0);
        assert_abs_diff_eq!(zero[0].saving_vs_large, 1.0 - 1.0 / 4.0);

        assert!(matches!(
            cost_sensitivity_phi(0.5, &[1.0]),
            Err(Error::BadCostRatio(_))
        ));
        let decisions = [ModelKind::Small, ModelKind::Large];
        let via_decisions = cost_sensitivity(&decisions, &[3.02]).unwrap();
        assert_abs_diff_eq!(via_decisions[0].cost, 0.5 + 0.5 * 3.02, epsilon = 1e-12);
    }

    #[test]
    fn diagnostic_escalate_all_gap_zero() {
        let records = fixture();
        let d = assumption_ii_diagnostic(&RoutingPolicy::escalate_all(), &records).unwrap();
        assert_eq!(d.gap, 0.0);
        assert_eq!(d.f1_large_on_escalated, d.f1_large_on_all);
    }

    #[test]
    fn diagnostic_undefined_when_nothing_escalates() {
        let records = fixture();
        assert!(matches!(
            assumption_ii_diagnostic(&RoutingPolicy::keep_all(), &records),
            Err(Error::DiagnosticUndefined)
        ));
    }

    #[test]
    fn per_entity_report_rules() {
        let mut records = fixture();
        let decisions = vec![ModelKind::Small; records.len()];
        // perfect small predictions on two entity types
        for r in &mut records {
            r.gold = [("camera", "X"), ("iso", "800")].into_iter().collect();
            r.small_output = r.gold.clone();
        }
        let report = per_entity_report(&records, &decisions);
        assert_abs_diff_eq!(report["camera"], 1.0);
        assert_abs_diff_eq!(report["iso"], 1.0);
        // entity type with no support anywhere stays omitted
        assert!(!report.contains_key("lens"));
    }

    #[test]
    fn reports_are_pure_functions_of_routed_outputs() {
        let base = fixture();
        let policy = RoutingPolicy::new(ScoreSource::RawMargin, 0.5).unwrap();
        let before = evaluate_cascade(&policy, &base, cm()).unwrap();

        // "b" (u = 0.25) stays small: corrupting its large output is invisible
        let mut kept_mutated = base.clone();
        kept_mutated[1].large_output = [("camera", "mutated")].into_iter().collect();
        let after_kept = evaluate_cascade(&policy, &kept_mutated, cm()).unwrap();
        assert_eq!(before, after_kept);

        // "d" (u = 0.75) escalates: corrupting its large output must show up
        let mut escalated_mutated = base.clone();
        escalated_mutated[3].large_output = [("camera", "mutated")].into_iter().collect();
        let after_escalated = evaluate_cascade(&policy, &escalated_mutated, cm()).unwrap();
        assert_ne!(before.micro_f1, after_escalated.micro_f1);
    }

    #[test]
    fn correctness_helper_consistency() {
        // gap between the two derivations would corrupt every report
        let r = toy_u("x", 0.4, false, true);
        assert_eq!(derive_correctness(&r, ModelKind::Small), 1);
        assert_eq!(derive_correctness(&r, ModelKind::Large), 0);
        assert!(!derive_match_counts(&r, ModelKind::Small).is_exact_match());
        assert!(derive_match_counts(&r, ModelKind::Large).is_exact_match());
    }
}
