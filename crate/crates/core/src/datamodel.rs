//! Record schema, dataset splits, JSONL serialization, and run configuration.
//!
//! Everything downstream consumes these types. All of them are immutable
//! after construction and safe to share across threads.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoding cap: records with longer token sequences are rejected.
pub const MAX_TOKEN_COUNT: usize = 256;

/// Slack when checking `top1_prob + top2_prob <= 1`, so that loggers that
/// round probabilities (or construct them from a margin) are not rejected
/// over the last ulp.
const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Entity types used when no configuration file is given.
pub const DEFAULT_ENTITY_SCHEMA: [&str; 6] = [
    "camera",
    "lens",
    "aperture",
    "shutter_speed",
    "iso",
    "focal_length",
];

/// Per-token top-1/top-2 next-token probabilities, plus an optional
/// per-token entropy in nats.
///
/// The margin signal is `top1_prob - top2_prob`; entropy is optional because
/// full-vocabulary distributions are rarely logged at this granularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenStats {
    #[serde(rename = "p1")]
    pub top1_prob: f64,
    #[serde(rename = "p2")]
    pub top2_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
}

impl TokenStats {
    pub fn new(top1_prob: f64, top2_prob: f64, entropy: Option<f64>) -> Self {
        Self {
            top1_prob,
            top2_prob,
            entropy,
        }
    }

    /// Per-token margin in `[0, 1]`.
    pub fn margin(&self) -> f64 {
        self.top1_prob - self.top2_prob
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.top1_prob.is_finite() || !self.top2_prob.is_finite() {
            return Err("token probabilities must be finite".into());
        }
        if self.top2_prob < 0.0 || self.top2_prob > self.top1_prob || self.top1_prob > 1.0 {
            return Err(format!(
                "token probabilities must satisfy 0 <= p2 <= p1 <= 1 (p1 = {}, p2 = {})",
                self.top1_prob, self.top2_prob
            ));
        }
        if self.top1_prob + self.top2_prob > 1.0 + PROB_SUM_TOLERANCE {
            return Err(format!(
                "token probabilities must satisfy p1 + p2 <= 1 (p1 = {}, p2 = {})",
                self.top1_prob, self.top2_prob
            ));
        }
        if let Some(h) = self.entropy {
            if !h.is_finite() || h < 0.0 {
                return Err(format!("token entropy must be finite and >= 0 (got {h})"));
            }
        }
        Ok(())
    }
}

/// Structured output of one model (or the gold labels) for one query:
/// a map from entity-type name to entity value. Absent keys mean "no
/// entity of that type".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityMap(pub BTreeMap<String, String>);

impl EntityMap {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn get(&self, entity_type: &str) -> Option<&str> {
        self.0.get(entity_type).map(String::as_str)
    }

    pub fn insert(&mut self, entity_type: impl Into<String>, value: impl Into<String>) {
        self.0.insert(entity_type.into(), value.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for EntityMap {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        Self(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

/// One query's logged evidence: the small model's token statistics and both
/// models' structured outputs next to the gold labels.
///
/// Wire format (JSONL, one object per line):
/// `{"id": ..., "tokens": [{"p1": ..., "p2": ..., "entropy"?: ...}], "small": {...}, "large": {...}, "gold": {...}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceRecord {
    pub id: String,
    #[serde(rename = "tokens")]
    pub small_tokens: Vec<TokenStats>,
    #[serde(rename = "small")]
    pub small_output: EntityMap,
    #[serde(rename = "large")]
    pub large_output: EntityMap,
    pub gold: EntityMap,
}

impl InferenceRecord {
    /// The stored output of the given model.
    pub fn output(&self, model: ModelKind) -> &EntityMap {
        match model {
            ModelKind::Small => &self.small_output,
            ModelKind::Large => &self.large_output,
        }
    }

    /// Checks every record-level invariant against the entity schema.
    pub fn validate(&self, schema: &[String]) -> Result<()> {
        let invariant = |rule: String| Error::Invariant {
            id: self.id.clone(),
            rule,
        };
        if self.id.is_empty() {
            return Err(Error::Invariant {
                id: String::from("<empty>"),
                rule: "id must be non-empty".into(),
            });
        }
        if self.small_tokens.is_empty() {
            return Err(invariant("token sequence must be non-empty".into()));
        }
        if self.small_tokens.len() > MAX_TOKEN_COUNT {
            return Err(invariant(format!(
                "token sequence exceeds the decoding cap of {MAX_TOKEN_COUNT}"
            )));
        }
        for (i, token) in self.small_tokens.iter().enumerate() {
            token
                .check()
                .map_err(|rule| invariant(format!("token {i}: {rule}")))?;
        }
        for (label, map) in [
            ("small", &self.small_output),
            ("large", &self.large_output),
            ("gold", &self.gold),
        ] {
            for (key, value) in map.iter() {
                if !schema.iter().any(|s| s == key) {
                    return Err(Error::UnknownEntityType {
                        id: self.id.clone(),
                        key: key.to_string(),
                    });
                }
                if value.is_empty() {
                    return Err(invariant(format!(
                        "{label} entity {key:?} has an empty value"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which model's output to examine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Small,
    Large,
}

/// Split roles in the three-way protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Calibration,
    Validation,
    Test,
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitName::Calibration => write!(f, "calibration"),
            SplitName::Validation => write!(f, "validation"),
            SplitName::Test => write!(f, "test"),
        }
    }
}

/// A named subset of the dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<InferenceRecord>,
}

/// Per-query inference costs, normalized so the small model costs 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub small_cost: f64,
    pub large_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            small_cost: 1.0,
            large_cost: 3.02,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.small_cost.is_finite() && self.large_cost.is_finite())
            || self.small_cost <= 0.0
            || self.large_cost <= self.small_cost
        {
            return Err(Error::InvalidConfig(format!(
                "cost model requires large_cost > small_cost > 0 (small = {}, large = {})",
                self.small_cost, self.large_cost
            )));
        }
        Ok(())
    }

    pub fn ratio(&self) -> f64 {
        self.large_cost / self.small_cost
    }
}

/// Run configuration, loaded from a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub entity_schema: Vec<String>,
    #[serde(default = "default_small_cost")]
    pub small_cost: f64,
    #[serde(default = "default_large_cost")]
    pub large_cost: f64,
    pub accuracy_target: f64,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_bootstrap_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_small_cost() -> f64 {
    1.0
}
fn default_large_cost() -> f64 {
    3.02
}
fn default_ece_bins() -> usize {
    10
}
fn default_bootstrap_resamples() -> usize {
    1000
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            entity_schema: DEFAULT_ENTITY_SCHEMA.iter().map(|s| s.to_string()).collect(),
            small_cost: default_small_cost(),
            large_cost: default_large_cost(),
            accuracy_target: 0.91,
            ece_bins: default_ece_bins(),
            bootstrap_resamples: default_bootstrap_resamples(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn cost_model(&self) -> CostModel {
        CostModel {
            small_cost: self.small_cost,
            large_cost: self.large_cost,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entity_schema.is_empty() {
            return Err(Error::InvalidConfig("entity_schema must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.entity_schema {
            if name.is_empty() {
                return Err(Error::InvalidConfig("entity type names must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate entity type {name:?}"
                )));
            }
        }
        self.cost_model().validate()?;
        if !(0.0..=1.0).contains(&self.accuracy_target) {
            return Err(Error::InvalidConfig(format!(
                "accuracy_target must be in [0, 1] (got {})",
                self.accuracy_target
            )));
        }
        if self.ece_bins < 2 {
            return Err(Error::InvalidConfig("ece_bins must be at least 2".into()));
        }
        if self.bootstrap_resamples < 1 {
            return Err(Error::InvalidConfig(
                "bootstrap_resamples must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::FileFormat {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}

/// Entity-level true/false positive and false negative counts.
///
/// A present/present pair with mismatched values counts one false positive
/// and one false negative, which makes exact-match correctness equivalent
/// to `false_pos == false_neg == 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl MatchCounts {
    /// Micro-F1 of these counts alone: `tp / (tp + (fp + fn)/2)`, and 0
    /// when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            0.0
        } else {
            (2 * self.true_pos) as f64 / denom as f64
        }
    }

    pub fn is_exact_match(&self) -> bool {
        self.false_pos == 0 && self.false_neg == 0
    }
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;
    fn add(self, rhs: MatchCounts) -> MatchCounts {
        MatchCounts {
            true_pos: self.true_pos + rhs.true_pos,
            false_pos: self.false_pos + rhs.false_pos,
            false_neg: self.false_neg + rhs.false_neg,
        }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, rhs: MatchCounts) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), |acc, c| acc + c)
    }
}

/// Binary correctness event for one model on one record: 0 when the model's
/// output equals gold exactly across all entity fields, 1 (error) otherwise.
pub fn derive_correctness(record: &InferenceRecord, model: ModelKind) -> u8 {
    u8::from(record.output(model) != &record.gold)
}

/// Entity-level counts for one prediction/gold pair.
pub fn entity_match_counts(prediction: &EntityMap, gold: &EntityMap) -> MatchCounts {
    entity_match_counts_by_type(prediction, gold)
        .into_values()
        .sum()
}

/// Same counting rule, broken out per entity type.
pub fn entity_match_counts_by_type(
    prediction: &EntityMap,
    gold: &EntityMap,
) -> BTreeMap<String, MatchCounts> {
    let mut out: BTreeMap<String, MatchCounts> = BTreeMap::new();
    let keys: HashSet<&str> = prediction.iter().map(|(k, _)| k).chain(gold.iter().map(|(k, _)| k)).collect();
    for key in keys {
        let counts = out.entry(key.to_string()).or_default();
        match (prediction.get(key), gold.get(key)) {
            (Some(p), Some(g)) if p == g => counts.true_pos += 1,
            (Some(_), Some(_)) => {
                counts.false_pos += 1;
                counts.false_neg += 1;
            }
            (Some(_), None) => counts.false_pos += 1,
            (None, Some(_)) => counts.false_neg += 1,
            (None, None) => unreachable!("key came from one of the maps"),
        }
    }
    out
}

/// Entity-level counts for the given model's output on one record.
pub fn derive_match_counts(record: &InferenceRecord, model: ModelKind) -> MatchCounts {
    entity_match_counts(record.output(model), &record.gold)
}

/// Loads and validates a JSONL records file. Records come back in file order.
pub fn load_records(path: impl AsRef<Path>, schema: &[String]) -> Result<Vec<InferenceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_records_from_reader(BufReader::new(file), schema)
}

/// Reader-based variant of [`load_records`].
pub fn load_records_from_reader<R: Read>(
    reader: BufReader<R>,
    schema: &[String],
) -> Result<Vec<InferenceRecord>> {
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| Error::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        let record: InferenceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate(schema)?;
        if !seen_ids.insert(record.id.clone()) {
            return Err(Error::DuplicateId { id: record.id });
        }
        records.push(record);
    }
    Ok(records)
}

/// Serializes records as JSONL. The output is byte-deterministic: entity
/// maps are ordered and floats use the shortest round-trip form.
pub fn records_to_jsonl(records: &[InferenceRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// Writes records as JSONL to a file.
pub fn write_records(path: impl AsRef<Path>, records: &[InferenceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(records_to_jsonl(records).as_bytes())
        .map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Shuffles deterministically under `seed` and partitions into
/// calibration/validation/test. Sizes are floor-rounded from the fractions,
/// with all remainder rows going to the test split.
pub fn split_dataset(
    records: Vec<InferenceRecord>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit, DatasetSplit)> {
    let (f_cal, f_val, f_test) = fractions;
    let sum = f_cal + f_val + f_test;
    if !(f_cal > 0.0 && f_val > 0.0 && f_test > 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions { sum });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("split_dataset needs at least one record"));
    }

    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // floor(n * f) with a small bump so that exact decimal fractions are not
    // pushed below the integer by representation error
    let take = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_cal = take(f_cal);
    let n_val = take(f_val);

    let mut slots: Vec<Option<InferenceRecord>> = records.into_iter().map(Some).collect();
    let mut grab = |idxs: &[usize]| -> Vec<InferenceRecord> {
        idxs.iter()
            .map(|&i| slots[i].take().expect("each index moved once"))
            .collect()
    };
    let cal = grab(&order[..n_cal]);
    let val = grab(&order[n_cal..n_cal + n_val]);
    let test = grab(&order[n_cal + n_val..]);

    Ok((
        DatasetSplit {
            name: SplitName::Calibration,
            records: cal,
        },
        DatasetSplit {
            name: SplitName::Validation,
            records: val,
        },
        DatasetSplit {
            name: SplitName::Test,
            records: test,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<String> {
        DEFAULT_ENTITY_SCHEMA.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn record(id: &str, tokens: &[(f64, f64)]) -> InferenceRecord {
        InferenceRecord {
            id: id.to_string(),
            small_tokens: tokens
                .iter()
                .map(|&(p1, p2)| TokenStats::new(p1, p2, None))
                .collect(),
            small_output: EntityMap::new(),
            large_output: EntityMap::new(),
            gold: EntityMap::new(),
        }
    }

    #[test]
    fn load_three_valid_lines_in_order() {
        let lines = r#"{"id":"a","tokens":[{"p1":0.9,"p2":0.1}],"small":{},"large":{},"gold":{}}
{"id":"b","tokens":[{"p1":0.8,"p2":0.1,"entropy":0.5}],"small":{"iso":"800"},"large":{"iso":"800"},"gold":{"iso":"800"}}
{"id":"c","tokens":[{"p1":1.0,"p2":0.0}],"small":{},"large":{},"gold":{}}
"#;
        let records =
            load_records_from_reader(BufReader::new(lines.as_bytes()), &schema()).unwrap();
        assert_eq!(records.len(), 3);
        let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn empty_file_gives_empty_sequence() {
        let records = load_records_from_reader(BufReader::new(&b""[..]), &schema()).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn top2_above_top1_names_the_record() {
        let line = r#"{"id":"bad-one","tokens":[{"p1":0.3,"p2":0.4}],"small":{},"large":{},"gold":{}}"#;
        let err =
            load_records_from_reader(BufReader::new(line.as_bytes()), &schema()).unwrap_err();
        match err {
            Error::Invariant { id, rule } => {
                assert_eq!(id, "bad-one");
                assert!(rule.contains("p2 <= p1"), "rule was {rule}");
            }
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_key_is_a_parse_error_with_line() {
        let lines = r#"{"id":"a","tokens":[{"p1":0.9,"p2":0.1}],"small":{},"large":{},"gold":{}}
{"id":"b","tokens":[{"p1":0.9,"p2":0.1}],"small":{},"large":{},"gold":{},"extra":1}
"#;
        let err =
            load_records_from_reader(BufReader::new(lines.as_bytes()), &schema()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_entity_type_reports_key() {
        let line = r#"{"id":"a","tokens":[{"p1":0.9,"p2":0.1}],"small":{"nonsense":"x"},"large":{},"gold":{}}"#;
        let err =
            load_records_from_reader(BufReader::new(line.as_bytes()), &schema()).unwrap_err();
        match err {
            Error::UnknownEntityType { id, key } => {
                assert_eq!(id, "a");
                assert_eq!(key, "nonsense");
            }
            other => panic!("expected unknown-entity error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let lines = r#"{"id":"a","tokens":[{"p1":0.9,"p2":0.1}],"small":{},"large":{},"gold":{}}
{"id":"a","tokens":[{"p1":0.9,"p2":0.1}],"small":{},"large":{},"gold":{}}
"#;
        let err =
            load_records_from_reader(BufReader::new(lines.as_bytes()), &schema()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { .. }));
    }

    #[test]
    fn token_cap_enforced() {
        let mut r = record("long", &[(0.9, 0.1)]);
        r.small_tokens = vec![TokenStats::new(0.9, 0.1, None); MAX_TOKEN_COUNT + 1];
        let err = r.validate(&schema()).unwrap_err();
        assert!(matches!(err, Error::Invariant { .. }));
        r.small_tokens.truncate(MAX_TOKEN_COUNT);
        r.validate(&schema()).unwrap();
    }

    #[test]
    fn correctness_exact_match_rules() {
        let mut r = record("r", &[(0.9, 0.1)]);
        r.gold = [("camera", "X"), ("iso", "800")].into_iter().collect();
        r.small_output = r.gold.clone();
        assert_eq!(derive_correctness(&r, ModelKind::Small), 0);

        r.small_output = [("camera", "X"), ("iso", "400")].into_iter().collect();
        assert_eq!(derive_correctness(&r, ModelKind::Small), 1);

        // extra entity not in gold
        r.small_output = [("camera", "X"), ("iso", "800"), ("lens", "L")]
            .into_iter()
            .collect();
        assert_eq!(derive_correctness(&r, ModelKind::Small), 1);
    }

    #[test]
    fn match_counts_rule() {
        let mut r = record("r", &[(0.9, 0.1)]);
        r.gold = [("camera", "X"), ("iso", "400")].into_iter().collect();
        r.small_output = [("camera", "X"), ("iso", "800")].into_iter().collect();
        let c = derive_match_counts(&r, ModelKind::Small);
        assert_eq!((c.true_pos, c.false_pos, c.false_neg), (1, 1, 1));

        r.small_output = r.gold.clone();
        let c = derive_match_counts(&r, ModelKind::Small);
        assert_eq!((c.true_pos, c.false_pos, c.false_neg), (2, 0, 0));

        r.small_output = EntityMap::new();
        r.gold = [("camera", "X"), ("iso", "400"), ("lens", "L")]
            .into_iter()
            .collect();
        let c = derive_match_counts(&r, ModelKind::Small);
        assert_eq!((c.true_pos, c.false_pos, c.false_neg), (0, 0, 3));
    }

    #[test]
    fn correctness_zero_implies_no_fp_fn() {
        let mut r = record("r", &[(0.9, 0.1)]);
        r.gold = [("camera", "X")].into_iter().collect();
        r.small_output = r.gold.clone();
        assert_eq!(derive_correctness(&r, ModelKind::Small), 0);
        assert!(derive_match_counts(&r, ModelKind::Small).is_exact_match());
    }

    #[test]
    fn split_sizes_match_protocol() {
        let records: Vec<InferenceRecord> = (0..75_000)
            .map(|i| record(&format!("r{i}"), &[(0.9, 0.1)]))
            .collect();
        let (cal, val, test) = split_dataset(records, (0.30, 0.20, 0.50), 7).unwrap();
        assert_eq!(cal.records.len(), 22_500);
        assert_eq!(val.records.len(), 15_000);
        assert_eq!(test.records.len(), 37_500);
    }

    #[test]
    fn split_remainder_goes_to_test() {
        let records: Vec<InferenceRecord> =
            (0..7).map(|i| record(&format!("r{i}"), &[(0.9, 0.1)])).collect();
        let (cal, val, test) = split_dataset(records, (0.3, 0.2, 0.5), 0).unwrap();
        assert_eq!(
            (cal.records.len(), val.records.len(), test.records.len()),
            (2, 1, 4)
        );
    }

    #[test]
    fn split_deterministic_and_partition() {
        let make = || -> Vec<InferenceRecord> {
            (0..10).map(|i| record(&format!("r{i}"), &[(0.9, 0.1)])).collect()
        };
        let (c1, v1, t1) = split_dataset(make(), (0.3, 0.2, 0.5), 42).unwrap();
        let (c2, v2, t2) = split_dataset(make(), (0.3, 0.2, 0.5), 42).unwrap();
        let ids = |s: &DatasetSplit| -> Vec<String> {
            s.records.iter().map(|r| r.id.clone()).collect()
        };
        assert_eq!(ids(&c1), ids(&c2));
        assert_eq!(ids(&v1), ids(&v2));
        assert_eq!(ids(&t1), ids(&t2));

        let mut all: Vec<String> = ids(&c1);
        all.extend(ids(&v1));
        all.extend(ids(&t1));
        all.sort();
        let mut expected: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let records = vec![record("a", &[(0.9, 0.1)])];
        assert!(matches!(
            split_dataset(records.clone(), (0.5, 0.2, 0.2), 0),
            Err(Error::BadFractions { .. })
        ));
        assert!(matches!(
            split_dataset(Vec::new(), (0.3, 0.2, 0.5), 0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"entity_schema":["camera","iso"],"accuracy_target":0.91}"#,
        )
        .unwrap();
        assert_eq!(cfg.small_cost, 1.0);
        assert_eq!(cfg.large_cost, 3.02);
        assert_eq!(cfg.ece_bins, 10);
        assert_eq!(cfg.bootstrap_resamples, 1000);
        assert_eq!(cfg.seed, 0);
        cfg.validate().unwrap();

        let bad = RunConfig {
            accuracy_target: 1.5,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
