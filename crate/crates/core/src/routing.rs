//! Threshold routing policies and their selection procedures.
//!
//! One policy interface covers the calibrated router and the three
//! baselines (raw-entropy threshold, split conformal, confidence
//! threshold). Selection sweeps every distinct observed score, so the
//! chosen threshold is exactly optimal for the family rather than
//! grid-resolution optimal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationModel;
use crate::datamodel::{
    derive_match_counts, CostModel, InferenceRecord, MatchCounts, ModelKind, TokenStats,
};
use crate::error::{Error, Result};
use crate::uncertainty::{
    margin_uncertainty, mean_entropy, mean_max_prob_confidence, Orientation,
};

/// What a policy thresholds on.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreSource {
    /// Calibrated error probability applied to the margin uncertainty.
    CalibratedP(CalibrationModel),
    /// The margin uncertainty itself, uncalibrated.
    RawMargin,
    /// Mean token entropy, uncalibrated.
    MeanEntropy,
    /// Mean top-1 probability (a confidence score).
    MeanMaxProb,
}

impl ScoreSource {
    pub fn orientation(&self) -> Orientation {
        match self {
            ScoreSource::MeanMaxProb => Orientation::Confidence,
            _ => Orientation::Uncertainty,
        }
    }

    /// The direction consistent with this source's orientation.
    pub fn direction(&self) -> Direction {
        match self.orientation() {
            Orientation::Uncertainty => Direction::EscalateIfAbove,
            Orientation::Confidence => Direction::EscalateIfBelow,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreSource::CalibratedP(_) => "calibrated_p",
            ScoreSource::RawMargin => "raw_margin",
            ScoreSource::MeanEntropy => "mean_entropy",
            ScoreSource::MeanMaxProb => "mean_max_prob",
        }
    }

    /// Scores a token sequence.
    pub fn score_tokens(&self, tokens: &[TokenStats]) -> Result<f64> {
        match self {
            ScoreSource::CalibratedP(model) => Ok(model.predict(margin_uncertainty(tokens)?)),
            ScoreSource::RawMargin => margin_uncertainty(tokens),
            ScoreSource::MeanEntropy => mean_entropy(tokens),
            ScoreSource::MeanMaxProb => mean_max_prob_confidence(tokens),
        }
    }

    /// Scores every record in order.
    pub fn score_records(&self, records: &[InferenceRecord]) -> Result<Vec<f64>> {
        records
            .iter()
            .map(|r| attach_id(self.score_tokens(&r.small_tokens), r))
            .collect()
    }
}

fn attach_id(result: Result<f64>, record: &InferenceRecord) -> Result<f64> {
    result.map_err(|e| match e {
        Error::SignalUnavailable { signal, .. } => Error::SignalUnavailable {
            id: record.id.clone(),
            signal,
        },
        other => other,
    })
}

/// Which side of the threshold escalates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Escalate when score > θ; the boundary stays small.
    #[serde(rename = "above")]
    EscalateIfAbove,
    /// Escalate when score ≤ θ; the boundary goes large.
    #[serde(rename = "below")]
    EscalateIfBelow,
}

/// A single-threshold routing rule over one score source.
///
/// Wire format: `{"score": ..., "direction": "above"|"below", "threshold": ...,
/// "calibration_model"?: {...}}`, where the model object is present exactly
/// when the score is `calibrated_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyWire", into = "PolicyWire")]
pub struct RoutingPolicy {
    score: ScoreSource,
    direction: Direction,
    threshold: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyWire {
    score: String,
    direction: Direction,
    threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration_model: Option<CalibrationModel>,
}

impl From<RoutingPolicy> for PolicyWire {
    fn from(policy: RoutingPolicy) -> Self {
        let (score, calibration_model) = match policy.score {
            ScoreSource::CalibratedP(model) => ("calibrated_p", Some(model)),
            ScoreSource::RawMargin => ("raw_margin", None),
            ScoreSource::MeanEntropy => ("mean_entropy", None),
            ScoreSource::MeanMaxProb => ("mean_max_prob", None),
        };
        PolicyWire {
            score: score.to_string(),
            direction: policy.direction,
            threshold: policy.threshold,
            calibration_model,
        }
    }
}

impl TryFrom<PolicyWire> for RoutingPolicy {
    type Error = Error;

    fn try_from(wire: PolicyWire) -> Result<Self> {
        let score = match (wire.score.as_str(), wire.calibration_model) {
            ("calibrated_p", Some(model)) => {
                model.validate()?;
                ScoreSource::CalibratedP(model)
            }
            ("calibrated_p", None) => {
                return Err(Error::InvalidPolicy(
                    "calibrated_p policies must embed a calibration_model".into(),
                ))
            }
            (other, Some(_)) => {
                return Err(Error::InvalidPolicy(format!(
                    "score {other:?} does not take a calibration_model"
                )))
            }
            ("raw_margin", None) => ScoreSource::RawMargin,
            ("mean_entropy", None) => ScoreSource::MeanEntropy,
            ("mean_max_prob", None) => ScoreSource::MeanMaxProb,
            (other, None) => {
                return Err(Error::InvalidPolicy(format!("unknown score {other:?}")))
            }
        };
        if wire.direction != score.direction() {
            return Err(Error::InvalidPolicy(format!(
                "direction does not match the orientation of score {:?}",
                score.name()
            )));
        }
        RoutingPolicy::new(score, wire.threshold)
    }
}

impl RoutingPolicy {
    /// Builds a policy, deriving the direction from the score's
    /// orientation.
    pub fn new(score: ScoreSource, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidPolicy(format!(
                "threshold must be finite (got {threshold})"
            )));
        }
        let direction = score.direction();
        Ok(Self {
            score,
            direction,
            threshold,
        })
    }

    /// Keeps every record on the small model (θ = 1 over the margin
    /// uncertainty, which no score exceeds).
    pub fn keep_all() -> Self {
        Self {
            score: ScoreSource::RawMargin,
            direction: Direction::EscalateIfAbove,
            threshold: 1.0,
        }
    }

    /// Escalates every record (θ = -1 over the margin uncertainty).
    pub fn escalate_all() -> Self {
        Self {
            score: ScoreSource::RawMargin,
            direction: Direction::EscalateIfAbove,
            threshold: -1.0,
        }
    }

    pub fn score_source(&self) -> &ScoreSource {
        &self.score
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Scores a bare token sequence (the serving path).
    pub fn score_tokens(&self, tokens: &[TokenStats]) -> Result<f64> {
        self.score.score_tokens(tokens)
    }

    pub fn score_record(&self, record: &InferenceRecord) -> Result<f64> {
        attach_id(self.score_tokens(&record.small_tokens), record)
    }

    /// The routing rule applied to an already-computed score.
    pub fn escalates(&self, score: f64) -> bool {
        match self.direction {
            Direction::EscalateIfAbove => score > self.threshold,
            Direction::EscalateIfBelow => score <= self.threshold,
        }
    }

    pub fn decision_for_score(&self, score: f64) -> ModelKind {
        if self.escalates(score) {
            ModelKind::Large
        } else {
            ModelKind::Small
        }
    }
}

/// Routes one record: which model's output the cascade serves.
pub fn route(policy: &RoutingPolicy, record: &InferenceRecord) -> Result<ModelKind> {
    Ok(policy.decision_for_score(policy.score_record(record)?))
}

/// Loads and validates a policy file.
pub fn load_policy(path: impl AsRef<Path>) -> Result<RoutingPolicy> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::FileFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes a policy file.
pub fn save_policy(policy: &RoutingPolicy, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(policy).expect("policy serialization cannot fail");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A selected policy with its validation-split operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub policy: RoutingPolicy,
    pub validation_cost: f64,
    pub validation_accuracy: f64,
    /// True when `validation_accuracy` meets the accuracy target the
    /// selection ran under.
    pub feasible: bool,
}

/// Precomputed per-candidate tallies for one scored record set.
///
/// Records are sorted by score once; any threshold's routed cost and
/// micro-F1 then read off two prefix-sum arrays.
pub(crate) struct SweepTable {
    sorted_scores: Vec<f64>,
    small_prefix: Vec<MatchCounts>,
    large_prefix: Vec<MatchCounts>,
}

impl SweepTable {
    pub(crate) fn new(records: &[InferenceRecord], scores: &[f64]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput(
                "threshold selection needs at least one scored record",
            ));
        }
        if records.len() != scores.len() {
            return Err(Error::InvalidConfig(format!(
                "records and scores must have equal lengths ({} vs {})",
                records.len(),
                scores.len()
            )));
        }
        for &s in scores {
            if !s.is_finite() {
                return Err(Error::NonFinite("routing score"));
            }
        }

        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

        let mut sorted_scores = Vec::with_capacity(order.len());
        let mut small_prefix = Vec::with_capacity(order.len() + 1);
        let mut large_prefix = Vec::with_capacity(order.len() + 1);
        small_prefix.push(MatchCounts::default());
        large_prefix.push(MatchCounts::default());
        for &i in &order {
            sorted_scores.push(scores[i]);
            let small = *small_prefix.last().expect("seeded")
                + derive_match_counts(&records[i], ModelKind::Small);
            let large = *large_prefix.last().expect("seeded")
                + derive_match_counts(&records[i], ModelKind::Large);
            small_prefix.push(small);
            large_prefix.push(large);
        }
        Ok(Self {
            sorted_scores,
            small_prefix,
            large_prefix,
        })
    }

    fn len(&self) -> usize {
        self.sorted_scores.len()
    }

    fn minus(a: MatchCounts, b: MatchCounts) -> MatchCounts {
        MatchCounts {
            true_pos: a.true_pos - b.true_pos,
            false_pos: a.false_pos - b.false_pos,
            false_neg: a.false_neg - b.false_neg,
        }
    }

    /// Cost, micro-F1, and escalation count of routing at `theta`.
    pub(crate) fn evaluate(
        &self,
        theta: f64,
        direction: Direction,
        cost_model: CostModel,
    ) -> (f64, f64, usize) {
        let n = self.len();
        let b = self.sorted_scores.partition_point(|s| *s <= theta);
        let small_total = self.small_prefix[n];
        let large_total = self.large_prefix[n];
        let (counts, escalated) = match direction {
            Direction::EscalateIfAbove => (
                self.small_prefix[b] + Self::minus(large_total, self.large_prefix[b]),
                n - b,
            ),
            Direction::EscalateIfBelow => (
                self.large_prefix[b] + Self::minus(small_total, self.small_prefix[b]),
                b,
            ),
        };
        let phi = escalated as f64 / n as f64;
        let cost = (1.0 - phi) * cost_model.small_cost + phi * cost_model.large_cost;
        (cost, counts.f1(), escalated)
    }

    /// Distinct observed scores plus a below-min and an above-max sentinel,
    /// ascending.
    pub(crate) fn candidates(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 2);
        out.push(self.sorted_scores[0] - 1.0);
        for &s in &self.sorted_scores {
            if out.last().copied() != Some(s) {
                out.push(s);
            }
        }
        out.push(self.sorted_scores[self.len() - 1] + 1.0);
        out
    }
}

fn pick_threshold(
    table: &SweepTable,
    direction: Direction,
    cost_model: CostModel,
    tau: f64,
    candidates: &[f64],
) -> (f64, f64, f64, bool) {
    // (threshold, cost, accuracy) of the best feasible and the best overall
    let mut feasible_best: Option<(f64, f64, f64)> = None;
    let mut fallback_best: Option<(f64, f64, f64)> = None;
    for &theta in candidates {
        let (cost, accuracy, _) = table.evaluate(theta, direction, cost_model);
        if accuracy >= tau {
            let take = match feasible_best {
                None => true,
                Some((_, best_cost, best_acc)) => {
                    cost < best_cost || (cost == best_cost && accuracy >= best_acc)
                }
            };
            if take {
                feasible_best = Some((theta, cost, accuracy));
            }
        }
        let take = match fallback_best {
            None => true,
            Some((_, best_cost, best_acc)) => {
                accuracy > best_acc || (accuracy == best_acc && cost <= best_cost)
            }
        };
        if take {
            fallback_best = Some((theta, cost, accuracy));
        }
    }
    match feasible_best {
        Some((theta, cost, accuracy)) => (theta, cost, accuracy, true),
        None => {
            let (theta, cost, accuracy) = fallback_best.expect("candidate list is non-empty");
            (theta, cost, accuracy, false)
        }
    }
}

/// Selects the cheapest threshold whose validation micro-F1 meets `tau`.
///
/// Candidates are every distinct observed score plus two sentinels; ties
/// in cost resolve to the higher accuracy. When no candidate is feasible
/// the accuracy-maximizing candidate comes back flagged `feasible: false`.
pub fn select_threshold(
    records: &[InferenceRecord],
    scores: &[f64],
    source: ScoreSource,
    cost_model: CostModel,
    tau: f64,
) -> Result<SelectionResult> {
    cost_model.validate()?;
    let direction = source.direction();
    let table = SweepTable::new(records, scores)?;
    let candidates = table.candidates();
    let (theta, cost, accuracy, feasible) =
        pick_threshold(&table, direction, cost_model, tau, &candidates);
    Ok(SelectionResult {
        policy: RoutingPolicy::new(source, theta)?,
        validation_cost: cost,
        validation_accuracy: accuracy,
        feasible,
    })
}

/// Dual selection: the best-accuracy threshold whose validation cost fits
/// under `budget`. Used for matched-cost comparisons.
pub fn select_under_budget(
    records: &[InferenceRecord],
    scores: &[f64],
    source: ScoreSource,
    cost_model: CostModel,
    budget: f64,
) -> Result<SelectionResult> {
    cost_model.validate()?;
    if budget < cost_model.small_cost {
        return Err(Error::InvalidConfig(format!(
            "budget {budget} is below the keep-everything cost {}",
            cost_model.small_cost
        )));
    }
    let direction = source.direction();
    let table = SweepTable::new(records, scores)?;
    let mut best: Option<(f64, f64, f64)> = None;
    for theta in table.candidates() {
        let (cost, accuracy, _) = table.evaluate(theta, direction, cost_model);
        if cost > budget {
            continue;
        }
        let take = match best {
            None => true,
            Some((_, best_cost, best_acc)) => {
                accuracy > best_acc || (accuracy == best_acc && cost <= best_cost)
            }
        };
        if take {
            best = Some((theta, cost, accuracy));
        }
    }
    let (theta, cost, accuracy) =
        best.expect("keep-everything always fits a budget >= small_cost");
    Ok(SelectionResult {
        policy: RoutingPolicy::new(source, theta)?,
        validation_cost: cost,
        validation_accuracy: accuracy,
        feasible: true,
    })
}

/// Default miscoverage grid for conformal selection: 0.01 through 0.99.
pub fn default_delta_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// The split-conformal threshold at miscoverage `delta`: the
/// `ceil((k+1)(1-delta))`-th smallest of the `k` given scores, clamped to
/// the observed range of ranks.
pub fn conformal_quantile(correct_scores: &[f64], delta: f64) -> Result<f64> {
    if correct_scores.is_empty() {
        return Err(Error::NoCorrectCalibration);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "miscoverage must lie in (0, 1) (got {delta})"
        )));
    }
    let mut sorted = correct_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    // small negative nudge so exactly-integer products do not round up
    let raw = ((k + 1) as f64 * (1.0 - delta) - 1e-9).ceil() as usize;
    let rank = raw.clamp(1, k);
    Ok(sorted[rank - 1])
}

/// Split-conformal selection: candidate thresholds come from the
/// miscoverage grid applied to margin scores of calibration records the
/// small model got right; the cheapest feasible candidate wins.
pub fn select_conformal_with_grid(
    calibration: &[InferenceRecord],
    calibration_u: &[f64],
    validation: &[InferenceRecord],
    validation_u: &[f64],
    cost_model: CostModel,
    tau: f64,
    deltas: &[f64],
) -> Result<SelectionResult> {
    cost_model.validate()?;
    if deltas.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if calibration.len() != calibration_u.len() {
        return Err(Error::InvalidConfig(format!(
            "calibration records and scores must have equal lengths ({} vs {})",
            calibration.len(),
            calibration_u.len()
        )));
    }
    let correct_u: Vec<f64> = calibration
        .iter()
        .zip(calibration_u)
        .filter(|(r, _)| crate::datamodel::derive_correctness(r, ModelKind::Small) == 0)
        .map(|(_, &u)| u)
        .collect();
    if correct_u.is_empty() {
        return Err(Error::NoCorrectCalibration);
    }

    let mut alphas = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        alphas.push(conformal_quantile(&correct_u, delta)?);
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let table = SweepTable::new(validation, validation_u)?;
    let (theta, cost, accuracy, feasible) = pick_threshold(
        &table,
        Direction::EscalateIfAbove,
        cost_model,
        tau,
        &alphas,
    );
    Ok(SelectionResult {
        policy: RoutingPolicy::new(ScoreSource::RawMargin, theta)?,
        validation_cost: cost,
        validation_accuracy: accuracy,
        feasible,
    })
}

/// [`select_conformal_with_grid`] over the default 0.01..0.99 grid.
pub fn select_conformal(
    calibration: &[InferenceRecord],
    calibration_u: &[f64],
    validation: &[InferenceRecord],
    validation_u: &[f64],
    cost_model: CostModel,
    tau: f64,
) -> Result<SelectionResult> {
    select_conformal_with_grid(
        calibration,
        calibration_u,
        validation,
        validation_u,
        cost_model,
        tau,
        &default_delta_grid(),
    )
}

/// Confidence-threshold baseline: mean top-1 probability, escalating low
/// confidence.
pub fn build_frugal_baseline(
    validation: &[InferenceRecord],
    cost_model: CostModel,
    tau: f64,
) -> Result<SelectionResult> {
    let source = ScoreSource::MeanMaxProb;
    let scores = source.score_records(validation)?;
    select_threshold(validation, &scores, source, cost_model, tau)
}

/// Raw mean-entropy baseline. Fails if any validation record lacks
/// entropy.
pub fn build_entropy_baseline(
    validation: &[InferenceRecord],
    cost_model: CostModel,
    tau: f64,
) -> Result<SelectionResult> {
    let source = ScoreSource::MeanEntropy;
    let scores = source.score_records(validation)?;
    select_threshold(validation, &scores, source, cost_model, tau)
}
