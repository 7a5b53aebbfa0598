//! Mapping raw uncertainty scores to error probabilities.
//!
//! The primary calibrator is isotonic regression fit by pool-adjacent
//! violators. A one-parameter temperature scaler is provided as the
//! parametric comparison, and equal-mass-bin reliability diagnostics
//! quantify how well either one fits.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted non-decreasing step function from uncertainty to error
/// probability.
///
/// `breakpoints` are the left edges of the constant pieces, strictly
/// increasing; `values` are the piece heights, non-decreasing in `[0, 1]`.
/// Queries left of the first breakpoint clamp to the first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    n: usize,
}

impl IsotonicModel {
    /// Rebuilds a model from its serialized parts, checking every
    /// structural invariant.
    pub fn from_parts(breakpoints: Vec<f64>, values: Vec<f64>, n: usize) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidModel("model must have at least one piece".into()));
        }
        if breakpoints.len() != values.len() {
            return Err(Error::InvalidModel(format!(
                "breakpoints and values must have equal lengths ({} vs {})",
                breakpoints.len(),
                values.len()
            )));
        }
        for pair in breakpoints.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidModel(format!(
                    "breakpoints must be strictly increasing ({} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        for &b in &breakpoints {
            if !b.is_finite() {
                return Err(Error::InvalidModel("breakpoints must be finite".into()));
            }
        }
        for &v in &values {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidModel(format!(
                    "values must lie in [0, 1] (got {v})"
                )));
            }
        }
        for pair in values.windows(2) {
            if pair[1] < pair[0] {
                return Err(Error::InvalidModel(format!(
                    "values must be non-decreasing ({} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        if n < breakpoints.len() {
            return Err(Error::InvalidModel(format!(
                "training count {} is smaller than the number of pieces {}",
                n,
                breakpoints.len()
            )));
        }
        Ok(Self {
            breakpoints,
            values,
            n,
        })
    }

    /// Calibrated error probability at `u`: the value of the rightmost
    /// piece whose left edge is at most `u`.
    pub fn predict(&self, u: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|b| *b <= u);
        if idx == 0 {
            self.values[0]
        } else {
            self.values[idx - 1]
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of training pairs the fit consumed.
    pub fn n_train(&self) -> usize {
        self.n
    }
}

/// Fits isotonic regression on (uncertainty, error-indicator) pairs.
///
/// Pairs sharing an identical `u` are pooled into one weighted point first,
/// so the fit is a function of `u`. Adjacent blocks merge only on a strict
/// decrease in mean, which keeps already-monotone inputs untouched.
pub fn fit_isotonic(u: &[f64], e: &[u8]) -> Result<IsotonicModel> {
    if u.len() != e.len() {
        return Err(Error::InvalidConfig(format!(
            "calibration inputs must have equal lengths ({} vs {})",
            u.len(),
            e.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: u.len(),
        });
    }
    for &x in u {
        if !x.is_finite() {
            return Err(Error::NonFinite("calibration score"));
        }
    }

    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));

    struct Block {
        left: f64,
        sum: f64,
        weight: f64,
    }
    impl Block {
        fn mean(&self) -> f64 {
            self.sum / self.weight
        }
    }

    // Pool exact ties so the fitted function is single-valued in u.
    let mut pooled: Vec<Block> = Vec::new();
    for &i in &order {
        let y = f64::from(u8::from(e[i] != 0));
        match pooled.last_mut() {
            Some(block) if block.left == u[i] => {
                block.sum += y;
                block.weight += 1.0;
            }
            _ => pooled.push(Block {
                left: u[i],
                sum: y,
                weight: 1.0,
            }),
        }
    }

    let mut stack: Vec<Block> = Vec::new();
    for block in pooled {
        let mut current = block;
        while let Some(prev) = stack.last() {
            if prev.mean() > current.mean() {
                let prev = stack.pop().expect("non-empty by the loop guard");
                current = Block {
                    left: prev.left,
                    sum: prev.sum + current.sum,
                    weight: prev.weight + current.weight,
                };
            } else {
                break;
            }
        }
        stack.push(current);
    }

    IsotonicModel::from_parts(
        stack.iter().map(|b| b.left).collect(),
        stack.iter().map(|b| b.mean()).collect(),
        u.len(),
    )
}

/// One-parameter logistic recalibration: sharpen or flatten the raw score
/// around 1/2 by dividing its logit by `temperature`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    temperature: f64,
}

/// Raw scores are clamped into `[CLAMP, 1 - CLAMP]` before the logit.
const LOGIT_CLAMP: f64 = 1e-6;

impl TemperatureModel {
    pub fn from_temperature(temperature: f64) -> Result<Self> {
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "temperature must be finite and positive (got {temperature})"
            )));
        }
        Ok(Self { temperature })
    }

    pub fn predict(&self, u: f64) -> f64 {
        let c = u.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
        let logit = (c / (1.0 - c)).ln();
        sigmoid(logit / self.temperature)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let ex = x.exp();
        ex / (1.0 + ex)
    }
}

/// Fits the temperature by minimizing negative log-likelihood on a
/// log-spaced grid over `[1e-3, 1e3]`, then refining the best bracket by
/// golden-section search.
pub fn fit_temperature(u: &[f64], e: &[u8]) -> Result<TemperatureModel> {
    if u.len() != e.len() {
        return Err(Error::InvalidConfig(format!(
            "calibration inputs must have equal lengths ({} vs {})",
            u.len(),
            e.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: u.len(),
        });
    }
    for &x in u {
        if !x.is_finite() {
            return Err(Error::NonFinite("calibration score"));
        }
    }
    let errors = e.iter().any(|&y| y != 0);
    let successes = e.contains(&0);
    if !errors || !successes {
        return Err(Error::DegenerateFit);
    }

    let nll = |t: f64| -> f64 {
        let model = TemperatureModel { temperature: t };
        let mut total = 0.0;
        for (&x, &y) in u.iter().zip(e) {
            let p = model.predict(x).clamp(1e-12, 1.0 - 1e-12);
            total -= if y != 0 { p.ln() } else { (1.0 - p).ln() };
        }
        total
    };

    // 121 grid points: exponents -3.00, -2.95, ..., 3.00
    let exponents: Vec<f64> = (0..=120).map(|i| -3.0 + 0.05 * i as f64).collect();
    let mut best = 0usize;
    let mut best_nll = f64::INFINITY;
    for (i, &ex) in exponents.iter().enumerate() {
        let value = nll(10f64.powf(ex));
        if value < best_nll {
            best_nll = value;
            best = i;
        }
    }

    let mut a = exponents[best.saturating_sub(1)];
    let mut b = exponents[(best + 1).min(exponents.len() - 1)];
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = nll(10f64.powf(c));
    let mut fd = nll(10f64.powf(d));
    for _ in 0..90 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = nll(10f64.powf(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = nll(10f64.powf(d));
        }
    }
    TemperatureModel::from_temperature(10f64.powf(0.5 * (a + b)))
}

/// A serializable calibrator of either family.
///
/// Wire format is a tagged object: `{"kind": "isotonic", ...}` or
/// `{"kind": "temperature", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CalibrationModel {
    Isotonic(IsotonicModel),
    Temperature(TemperatureModel),
}

impl CalibrationModel {
    pub fn predict(&self, u: f64) -> f64 {
        match self {
            CalibrationModel::Isotonic(m) => m.predict(u),
            CalibrationModel::Temperature(m) => m.predict(u),
        }
    }

    /// Re-checks structural invariants, for models that arrived over the
    /// wire rather than from a fit.
    pub fn validate(&self) -> Result<()> {
        match self {
            CalibrationModel::Isotonic(m) => {
                IsotonicModel::from_parts(m.breakpoints.clone(), m.values.clone(), m.n)?;
            }
            CalibrationModel::Temperature(m) => {
                TemperatureModel::from_temperature(m.temperature)?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: CalibrationModel = serde_json::from_str(text)
            .map_err(|e| Error::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidModel(message) => Error::FileFormat {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serialization cannot fail");
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// One equal-mass reliability bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub mean_predicted: f64,
    pub observed_rate: f64,
}

/// Reliability diagnostics over equal-mass bins, with the expected
/// calibration error they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

impl ReliabilityTable {
    /// Plot-ready CSV, one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count,mean_predicted,observed_rate\n");
        for (i, bin) in self.bins.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i, bin.count, bin.mean_predicted, bin.observed_rate
            ));
        }
        out
    }
}

/// Splits `n` sorted items into at most `bins` contiguous groups whose
/// sizes differ by at most one; the earlier groups take the remainder.
fn equal_mass_ranges(n: usize, bins: usize) -> Vec<Range<usize>> {
    let bins = bins.min(n);
    let base = n / bins;
    let rem = n % bins;
    let mut ranges = Vec::with_capacity(bins);
    let mut start = 0;
    for i in 0..bins {
        let size = base + usize::from(i < rem);
        ranges.push(start..start + size);
        start += size;
    }
    ranges
}

/// Builds the reliability table for predicted error probabilities against
/// observed error indicators.
pub fn reliability_table(
    predicted: &[f64],
    errors: &[u8],
    bins: usize,
) -> Result<ReliabilityTable> {
    if predicted.len() != errors.len() {
        return Err(Error::InvalidConfig(format!(
            "diagnostic inputs must have equal lengths ({} vs {})",
            predicted.len(),
            errors.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("reliability table needs at least one prediction"));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be at least 1".into()));
    }
    for &p in predicted {
        if !p.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return Err(Error::InvalidModel(format!(
                "predicted probabilities must lie in [0, 1] (got {p})"
            )));
        }
    }

    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[a].total_cmp(&predicted[b]));

    let n = predicted.len() as f64;
    let mut table = ReliabilityTable {
        bins: Vec::new(),
        ece: 0.0,
    };
    for range in equal_mass_ranges(predicted.len(), bins) {
        let members = &order[range];
        let count = members.len();
        let mean_predicted =
            members.iter().map(|&i| predicted[i]).sum::<f64>() / count as f64;
        let observed_rate =
            members.iter().map(|&i| f64::from(u8::from(errors[i] != 0))).sum::<f64>()
                / count as f64;
        table.ece += (count as f64 / n) * (observed_rate - mean_predicted).abs();
        table.bins.push(ReliabilityBin {
            count,
            mean_predicted,
            observed_rate,
        });
    }
    Ok(table)
}

/// Expected calibration error under equal-mass binning.
pub fn expected_calibration_error(predicted: &[f64], errors: &[u8], bins: usize) -> Result<f64> {
    reliability_table(predicted, errors, bins).map(|t| t.ece)
}
