//! Sequence-level uncertainty signals computed from per-token statistics.
//!
//! The primary signal is the mean token margin, reported in uncertainty
//! orientation: `u = 1 - mean(top1 - top2)`, clamped to `[0, 1]`. Two
//! alternatives are provided for baselines: mean token entropy (uncertainty
//! orientation, unbounded above) and mean top-1 probability (confidence
//! orientation).

use serde::{Deserialize, Serialize};

use crate::datamodel::{InferenceRecord, TokenStats};
use crate::error::{Error, Result};

/// Which way a signal points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Larger values mean the model is less sure.
    Uncertainty,
    /// Larger values mean the model is more sure.
    Confidence,
}

/// The supported sequence-level signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Margin,
    MeanEntropy,
    MeanMaxProb,
}

impl SignalKind {
    pub fn orientation(self) -> Orientation {
        match self {
            SignalKind::Margin | SignalKind::MeanEntropy => Orientation::Uncertainty,
            SignalKind::MeanMaxProb => Orientation::Confidence,
        }
    }
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SignalKind::Margin => "margin",
            SignalKind::MeanEntropy => "mean_entropy",
            SignalKind::MeanMaxProb => "mean_max_prob",
        };
        write!(f, "{name}")
    }
}

/// Margin uncertainty of one token sequence: `1 - mean(top1 - top2)`,
/// clamped into `[0, 1]`.
pub fn margin_uncertainty(tokens: &[TokenStats]) -> Result<f64> {
    let mean = mean_of(tokens, |t| Ok(t.margin()))?;
    Ok((1.0 - mean).clamp(0.0, 1.0))
}

/// Mean per-token entropy. Fails if any token lacks a logged entropy.
pub fn mean_entropy(tokens: &[TokenStats]) -> Result<f64> {
    mean_of(tokens, |t| {
        t.entropy.ok_or_else(|| Error::SignalUnavailable {
            id: String::new(),
            signal: "mean_entropy".into(),
        })
    })
}

/// Mean top-1 probability, a confidence score in `[0, 1]`.
pub fn mean_max_prob_confidence(tokens: &[TokenStats]) -> Result<f64> {
    mean_of(tokens, |t| Ok(t.top1_prob))
}

fn mean_of(
    tokens: &[TokenStats],
    per_token: impl Fn(&TokenStats) -> Result<f64>,
) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::EmptyTokenSequence);
    }
    let mut sum = 0.0;
    for token in tokens {
        sum += per_token(token)?;
    }
    Ok(sum / tokens.len() as f64)
}

/// Computes the chosen signal for one record, attaching the record id to
/// any failure.
pub fn record_signal(record: &InferenceRecord, kind: SignalKind) -> Result<f64> {
    let computed = match kind {
        SignalKind::Margin => margin_uncertainty(&record.small_tokens),
        SignalKind::MeanEntropy => mean_entropy(&record.small_tokens),
        SignalKind::MeanMaxProb => mean_max_prob_confidence(&record.small_tokens),
    };
    computed.map_err(|e| match e {
        Error::SignalUnavailable { signal, .. } => Error::SignalUnavailable {
            id: record.id.clone(),
            signal,
        },
        other => other,
    })
}

/// A scored dataset: one value per record, in record order, plus the
/// orientation needed to route on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecords {
    pub kind: SignalKind,
    pub orientation: Orientation,
    pub values: Vec<f64>,
}

/// Scores every record with the chosen signal. Order matches the input.
pub fn score_records(records: &[InferenceRecord], kind: SignalKind) -> Result<ScoredRecords> {
    let mut values = Vec::with_capacity(records.len());
    for record in records {
        values.push(record_signal(record, kind)?);
    }
    Ok(ScoredRecords {
        kind,
        orientation: kind.orientation(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EntityMap;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tokens(pairs: &[(f64, f64)]) -> Vec<TokenStats> {
        pairs.iter().map(|&(p1, p2)| TokenStats::new(p1, p2, None)).collect()
    }

    #[test]
    fn margin_uncertainty_worked_example() {
        // margins 0.8, 0.3, 0.55 -> mean 0.55 -> u = 0.45
        let toks = tokens(&[(0.9, 0.1), (0.5, 0.2), (0.6, 0.05)]);
        assert_abs_diff_eq!(margin_uncertainty(&toks).unwrap(), 0.45, epsilon = 1e-12);
    }

    #[test]
    fn margin_uncertainty_extremes() {
        assert_abs_diff_eq!(
            margin_uncertainty(&tokens(&[(1.0, 0.0), (1.0, 0.0)])).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            margin_uncertainty(&tokens(&[(0.5, 0.5)])).unwrap(),
            1.0
        );
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(matches!(
            margin_uncertainty(&[]),
            Err(Error::EmptyTokenSequence)
        ));
        assert!(matches!(mean_entropy(&[]), Err(Error::EmptyTokenSequence)));
        assert!(matches!(
            mean_max_prob_confidence(&[]),
            Err(Error::EmptyTokenSequence)
        ));
    }

    #[test]
    fn mean_entropy_requires_every_token() {
        let mut toks = tokens(&[(0.9, 0.1), (0.8, 0.1)]);
        toks[0].entropy = Some(0.4);
        assert!(matches!(
            mean_entropy(&toks),
            Err(Error::SignalUnavailable { .. })
        ));
        toks[1].entropy = Some(0.6);
        assert_abs_diff_eq!(mean_entropy(&toks).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn record_signal_attaches_id() {
        let record = InferenceRecord {
            id: "needs-entropy".into(),
            small_tokens: tokens(&[(0.9, 0.1)]),
            small_output: EntityMap::new(),
            large_output: EntityMap::new(),
            gold: EntityMap::new(),
        };
        match record_signal(&record, SignalKind::MeanEntropy) {
            Err(Error::SignalUnavailable { id, signal }) => {
                assert_eq!(id, "needs-entropy");
                assert_eq!(signal, "mean_entropy");
            }
            other => panic!("expected signal-unavailable, got {other:?}"),
        }
    }

    #[test]
    fn orientations() {
        assert_eq!(SignalKind::Margin.orientation(), Orientation::Uncertainty);
        assert_eq!(
            SignalKind::MeanEntropy.orientation(),
            Orientation::Uncertainty
        );
        assert_eq!(
            SignalKind::MeanMaxProb.orientation(),
            Orientation::Confidence
        );
    }

    #[test]
    fn display_names_match_wire_names() {
        assert_eq!(SignalKind::Margin.to_string(), "margin");
        assert_eq!(SignalKind::MeanEntropy.to_string(), "mean_entropy");
        assert_eq!(SignalKind::MeanMaxProb.to_string(), "mean_max_prob");
    }

    proptest! {
        // Token order cannot matter for a mean.
        #[test]
        fn permutation_invariant(
            mut pairs in proptest::collection::vec((0.5f64..=1.0, 0.0f64..=0.4), 1..20),
            swap_a in 0usize..20,
            swap_b in 0usize..20,
        ) {
            let pairs: Vec<(f64, f64)> = pairs
                .drain(..)
                .map(|(p1, p2)| (p1, p2.min(1.0 - p1)))
                .collect();
            let base = margin_uncertainty(&tokens(&pairs)).unwrap();
            let mut permuted = pairs.clone();
            let n = permuted.len();
            permuted.swap(swap_a % n, swap_b % n);
            let after = margin_uncertainty(&tokens(&permuted)).unwrap();
            prop_assert!((base - after).abs() < 1e-12);
        }

        // Raising a single margin can only lower (or keep) the uncertainty.
        #[test]
        fn monotone_in_each_margin(
            pairs in proptest::collection::vec((0.5f64..=0.9, 0.0f64..=0.1), 1..20),
            idx in 0usize..20,
            bump in 0.0f64..=0.05,
        ) {
            let base = margin_uncertainty(&tokens(&pairs)).unwrap();
            let mut bumped = pairs.clone();
            let n = bumped.len();
            bumped[idx % n].0 += bump;
            let after = margin_uncertainty(&tokens(&bumped)).unwrap();
            prop_assert!(after <= base + 1e-12);
        }

        // Clamped into [0, 1] for any valid token set.
        #[test]
        fn bounded(pairs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..20)) {
            let pairs: Vec<(f64, f64)> = pairs
                .into_iter()
                .map(|(a, b)| {
                    let p1 = a.max(b).min(1.0);
                    let p2 = a.min(b).min(1.0 - p1);
                    (p1, p2)
                })
                .collect();
            let u = margin_uncertainty(&tokens(&pairs)).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
        }
    }
}
