//! Temperature scaling of classifier logits.
//!
//! A single positive scalar `T` divides every logit before the softmax. `T` is
//! fitted by minimising the mean negative log-likelihood of held-out labels,
//! and the effect is measured with expected calibration error (ECE) over
//! equal-width confidence bins.

use serde::{Deserialize, Serialize};

use crate::artifact_io::LabelVector;
use crate::error::{EvalError, Result};
use crate::numeric::order_independent_sum;

/// Temperature reported for the CUB fine-tuned Inception-v3 classifier.
///
/// Kept as a reference constant only: reproducing it requires that
/// classifier's validation logits.
pub const CUB_REFERENCE_TEMPERATURE: f64 = 0.598;

pub const DEFAULT_ECE_BINS: usize = 10;

/// Positive, finite softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Temperature(value))
        } else {
            Err(EvalError::Domain(format!(
                "temperature must be positive and finite, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = EvalError;

    fn try_from(value: f64) -> Result<Self> {
        Temperature::new(value)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// `softmax(z / T)` with max-subtraction.
pub fn softmax_with_temperature(logits: &[f64], t: Temperature) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(EvalError::Domain(format!(
            "softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(EvalError::Domain(format!("non-finite logit {v}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|&z| z / t.0).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `-log softmax(z / T)[label]` evaluated through log-sum-exp.
fn sample_nll(logits: &[f64], label: usize, t: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
    let log_norm = logits
        .iter()
        .map(|&z| (z / t - max).exp())
        .sum::<f64>()
        .ln();
    (log_norm + max - logits[label] / t).max(0.0)
}

fn check_pair(logits: &[Vec<f64>], labels: &LabelVector) -> Result<usize> {
    let classes = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|row| row.len() != classes) {
        return Err(EvalError::Validation("ragged logit rows".into()));
    }
    labels.check_against(logits.len(), classes)?;
    if let Some(v) = logits.iter().flatten().find(|v| !v.is_finite()) {
        return Err(EvalError::Domain(format!("non-finite logit {v}")));
    }
    Ok(classes)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits / T)`.
pub fn nll(logits: &[Vec<f64>], labels: &LabelVector, t: Temperature) -> Result<f64> {
    check_pair(logits, labels)?;
    if logits.is_empty() {
        return Err(EvalError::EmptyInput("no samples".into()));
    }
    Ok(mean_nll(logits, labels.as_slice(), t.0))
}

fn mean_nll(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    let terms = logits
        .iter()
        .zip(labels)
        .map(|(row, &label)| sample_nll(row, label, t))
        .collect();
    order_independent_sum(terms) / logits.len() as f64
}

/// Bracket and stopping width for the temperature search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSearch {
    pub t_min: f64,
    pub t_max: f64,
    /// Stop once the bracket is narrower than this, in temperature units.
    pub tol: f64,
}

impl Default for TemperatureSearch {
    fn default() -> Self {
        TemperatureSearch {
            t_min: 0.05,
            t_max: 20.0,
            tol: 1e-4,
        }
    }
}

impl TemperatureSearch {
    fn check(&self) -> Result<()> {
        let ok = self.t_min.is_finite()
            && self.t_max.is_finite()
            && self.t_min > 0.0
            && self.t_min < self.t_max
            && self.tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EvalError::Validation(format!(
                "invalid temperature search {self:?}"
            )))
        }
    }
}

/// Fits `T` by golden-section search on `log T` over `[t_min, t_max]`.
///
/// The returned temperature never has a higher NLL than the bracket ends or
/// `T = 1` (when it lies inside the bracket).
pub fn fit_temperature(
    logits: &[Vec<f64>],
    labels: &LabelVector,
    search: TemperatureSearch,
) -> Result<Temperature> {
    search.check()?;
    let classes = check_pair(logits, labels)?;
    if classes < 2 || logits.len() < 2 {
        return Err(EvalError::Validation(format!(
            "temperature fitting needs at least 2 classes and 2 samples, got {classes} and {}",
            logits.len()
        )));
    }
    let labels = labels.as_slice();
    if labels.iter().all(|&l| l == labels[0]) && logits.iter().all(|row| row == &logits[0]) {
        return Err(EvalError::Degenerate(
            "all labels and all logit rows are identical".into(),
        ));
    }

    let objective = |log_t: f64| mean_nll(logits, labels, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (search.t_min.ln(), search.t_max.ln());
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    while hi.exp() - lo.exp() > search.tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2);
        }
    }

    let mut candidates = vec![((lo + hi) / 2.0).exp(), search.t_min, search.t_max];
    if (search.t_min..=search.t_max).contains(&1.0) {
        candidates.push(1.0);
    }
    let best = candidates
        .into_iter()
        .map(|t| (t, mean_nll(logits, labels, t)))
        .fold(None, |best: Option<(f64, f64)>, (t, f)| match best {
            Some((_, bf)) if bf <= f => best,
            _ => Some((t, f)),
        })
        .map(|(t, _)| t)
        .unwrap_or(1.0);
    Temperature::new(best)
}

/// One equal-width confidence bin `(lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub n_bins: usize,
    pub bin_edges: Vec<f64>,
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Bins samples by confidence (max probability) and computes ECE.
///
/// A sample of confidence `c` lands in bin `ceil(c * n_bins)` (1-based), with
/// `c = 0` going to the first bin.
pub fn reliability(
    probs: &[Vec<f64>],
    labels: &LabelVector,
    n_bins: usize,
) -> Result<ReliabilityReport> {
    if n_bins == 0 {
        return Err(EvalError::Validation("n_bins must be at least 1".into()));
    }
    let classes = probs.first().map_or(0, Vec::len);
    if probs.iter().any(|row| row.len() != classes) {
        return Err(EvalError::Validation("ragged probability rows".into()));
    }
    labels.check_against(probs.len(), classes)?;
    if probs.is_empty() {
        return Err(EvalError::EmptyInput("no samples".into()));
    }

    let mut counts = vec![0usize; n_bins];
    let mut conf_sums = vec![0.0f64; n_bins];
    let mut correct = vec![0usize; n_bins];
    for (row, &label) in probs.iter().zip(labels.as_slice()) {
        let prediction = argmax(row);
        let confidence = row[prediction];
        let bin = ((confidence * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        counts[bin] += 1;
        conf_sums[bin] += confidence;
        if prediction == label {
            correct[bin] += 1;
        }
    }

    let total = probs.len() as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let count = counts[b];
            let (mean_confidence, accuracy) = if count > 0 {
                let conf = conf_sums[b] / count as f64;
                let acc = correct[b] as f64 / count as f64;
                ece += count as f64 / total * (acc - conf).abs();
                (Some(conf), Some(acc))
            } else {
                (None, None)
            };
            ReliabilityBin {
                lower: bin_edges[b],
                upper: bin_edges[b + 1],
                count,
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityReport {
        n_bins,
        bin_edges,
        bins,
        ece,
    })
}

/// Applies `softmax(z / T)` to every row.
pub fn scaled_probabilities(logits: &[Vec<f64>], t: Temperature) -> Result<Vec<Vec<f64>>> {
    logits
        .iter()
        .map(|row| softmax_with_temperature(row, t))
        .collect()
}

/// Before/after summary of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub search: TemperatureSearch,
    pub split_id: Option<String>,
    pub reliability_before: ReliabilityReport,
    pub reliability_after: ReliabilityReport,
}

pub fn calibrate(
    logits: &[Vec<f64>],
    labels: &LabelVector,
    search: TemperatureSearch,
    n_bins: usize,
    split_id: Option<String>,
) -> Result<CalibrationSummary> {
    let t = fit_temperature(logits, labels, search)?;
    let before = reliability(
        &scaled_probabilities(logits, Temperature::ONE)?,
        labels,
        n_bins,
    )?;
    let after = reliability(&scaled_probabilities(logits, t)?, labels, n_bins)?;
    Ok(CalibrationSummary {
        temperature: t.value(),
        nll_before: nll(logits, labels, Temperature::ONE)?,
        nll_after: nll(logits, labels, t)?,
        ece_before: before.ece,
        ece_after: after.ece,
        search,
        split_id,
        reliability_before: before,
        reliability_after: after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::INFINITY).is_err());
        assert!(serde_json::from_str::<Temperature>("-2.0").is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(
            softmax_with_temperature(&[0.0, 0.0], t(7.0)).unwrap(),
            vec![0.5, 0.5]
        );
        let p = softmax_with_temperature(&[2f64.ln(), 0.0], Temperature::ONE).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_with_temperature(&[1.0, 0.0], t(0.5)).unwrap();
        assert!((p[0] - 0.880_797_077_977_882_4).abs() < 1e-12);
        assert!((p[1] - 0.119_202_922_022_117_6).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_with_temperature(&[1.0], Temperature::ONE).is_err());
        assert!(softmax_with_temperature(&[1.0, f64::NAN], Temperature::ONE).is_err());
    }

    #[test]
    fn softmax_limits() {
        let z = [1.0, 3.0, -2.0, 0.5];
        let hot = softmax_with_temperature(&z, t(1e6)).unwrap();
        assert!(hot.iter().all(|p| (p - 0.25).abs() < 1e-4));
        let cold = softmax_with_temperature(&z, t(1e-4)).unwrap();
        assert!((cold[1] - 1.0).abs() < 1e-4);
        assert!(cold.iter().map(|p| p.abs()).sum::<f64>() - 1.0 < 1e-12);
    }

    #[test]
    fn nll_uniform_and_limit() {
        let labels = LabelVector::new(vec![0]);
        let v = nll(&[vec![0.0, 0.0]], &labels, Temperature::ONE).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);

        let logits = vec![vec![5.0, -1.0, 2.0], vec![0.3, 0.1, -4.0]];
        let labels = LabelVector::new(vec![1, 2]);
        let v = nll(&logits, &labels, t(1e6)).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn nll_shape_mismatch() {
        let labels = LabelVector::new(vec![0, 1]);
        assert!(matches!(
            nll(&[vec![0.0, 1.0]], &labels, Temperature::ONE),
            Err(EvalError::Validation(_))
        ));
    }

    #[test]
    fn fit_rejects_degenerate() {
        let logits = vec![vec![1.0, 0.0]; 4];
        let labels = LabelVector::new(vec![0; 4]);
        assert!(matches!(
            fit_temperature(&logits, &labels, TemperatureSearch::default()),
            Err(EvalError::Degenerate(_))
        ));
    }

    #[test]
    fn fit_never_worse_than_identity() {
        let logits = vec![
            vec![2.0, 0.0, -1.0],
            vec![0.5, 0.2, 0.1],
            vec![-1.0, 3.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let labels = LabelVector::new(vec![0, 2, 1, 2]);
        let fitted = fit_temperature(&logits, &labels, TemperatureSearch::default()).unwrap();
        let at_fit = nll(&logits, &labels, fitted).unwrap();
        let at_one = nll(&logits, &labels, Temperature::ONE).unwrap();
        assert!(at_fit <= at_one + 1e-9);
    }

    #[test]
    fn ece_hand_cases() {
        let one_hot = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let right = reliability(&one_hot, &LabelVector::new(vec![0, 1]), 10).unwrap();
        assert_eq!(right.ece, 0.0);
        let wrong = reliability(&one_hot, &LabelVector::new(vec![1, 0]), 10).unwrap();
        assert_eq!(wrong.ece, 1.0);

        let probs = vec![vec![0.8, 0.2]; 10];
        let labels = LabelVector::new(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let report = reliability(&probs, &labels, 10).unwrap();
        assert!((report.ece - 0.3).abs() < 1e-12);
        assert_eq!(report.bins[7].count, 10);
    }

    #[test]
    fn bin_rule_is_right_closed() {
        // confidence 0.5 with 2 bins -> bin 1; 0.5000001 -> bin 2.
        let probs = vec![vec![0.5, 0.5], vec![0.500_000_1, 0.499_999_9]];
        let report = reliability(&probs, &LabelVector::new(vec![0, 0]), 2).unwrap();
        assert_eq!(report.bins[0].count, 1);
        assert_eq!(report.bins[1].count, 1);
        assert_eq!(report.bin_edges, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn zero_confidence_goes_to_first_bin() {
        // Only reachable with a degenerate all-zero row; the rule still holds.
        let report = reliability(&[vec![0.0, 0.0]], &LabelVector::new(vec![0]), 4).unwrap();
        assert_eq!(report.bins[0].count, 1);
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn reliability_requires_bins() {
        assert!(reliability(&[vec![1.0, 0.0]], &LabelVector::new(vec![0]), 0).is_err());
    }
}
