//! Bias diagnostics over prediction logs.
//!
//! Three prompt biases are quantified from the records a run leaves
//! behind: majority label bias (predictions track the class frequency of
//! the training examples), recency bias (predictions repeat answers near
//! the prompt's end), and common token bias (predictions track how
//! frequent a label name is in ordinary text). A threshold scan shows
//! how far a biased-but-separable binary classifier is from its best
//! decision rule.
//!
//! Every diagnostic is a pure function of the log: same log, same bytes
//! out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::ProbVector;
use crate::prompt::LabelSpace;
use crate::ClassId;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("diagnostic requires a non-empty log")]
    EmptyLog,
    #[error("diagnostic requires a label space on the log")]
    MissingLabelSpace,
    #[error("record {index} has {found} training answers, expected {expected}")]
    HeterogeneousPositions {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("correlation requires at least 3 classes, log has {0}")]
    TooFewClasses(usize),
    #[error("no frequency for label name `{0}`")]
    MissingFrequency(String),
    #[error("correlation undefined: {0} values have zero variance")]
    ZeroVariance(&'static str),
    #[error("threshold scan requires a binary label space, log has {0} classes")]
    NotBinary(usize),
    #[error("class {0} is outside the log's label space")]
    UnknownClass(ClassId),
    #[error("record {0} is missing its raw probability vector")]
    MissingRaw(usize),
}

/// One prediction with the prompt context the diagnostics read:
/// training answers in prompt order, the predicted and gold answers
/// (label names for classification, spans for generation), and the raw
/// probability vector when available.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub ordered_labels: Vec<String>,
    pub predicted: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<ProbVector>,
}

/// Input to all diagnostics. `label_space` is required by the
/// classification diagnostics and ignored by the generation ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionLog {
    pub records: Vec<LogRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_space: Option<LabelSpace>,
}

impl PredictionLog {
    fn require_nonempty(&self) -> Result<(), DiagnosticsError> {
        if self.records.is_empty() {
            return Err(DiagnosticsError::EmptyLog);
        }
        Ok(())
    }

    fn require_label_space(&self) -> Result<&LabelSpace, DiagnosticsError> {
        self.label_space
            .as_ref()
            .ok_or(DiagnosticsError::MissingLabelSpace)
    }
}

// ─── Majority label bias ─────────────────────────────────────────────────────

/// Composition pattern of a prompt, e.g. "PPNN" for two Positive then
/// two Negative training examples. Uses each label name's first letter
/// when the initials are distinct within the label space, and the full
/// names joined with '|' otherwise.
pub fn composition_pattern(ordered_labels: &[String], space: &LabelSpace) -> String {
    let initials: Vec<char> = space
        .names()
        .iter()
        .map(|n| n.chars().next().unwrap_or('?').to_ascii_uppercase())
        .collect();
    let distinct = initials
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .len()
        == initials.len();
    if distinct {
        ordered_labels
            .iter()
            .map(|label| match space.class_of_name(label) {
                Some(class) => initials[class.0],
                None => '?',
            })
            .collect()
    } else {
        ordered_labels.join("|")
    }
}

/// For each composition pattern in the log, the fraction of predictions
/// per class name. Predictions outside the label space still count in
/// the denominator, so fractions sum to 1 exactly when every prediction
/// is in the space.
pub fn majority_label_curve(
    log: &PredictionLog,
) -> Result<BTreeMap<String, BTreeMap<String, f64>>, DiagnosticsError> {
    log.require_nonempty()?;
    let space = log.require_label_space()?;
    let mut buckets: BTreeMap<String, (usize, BTreeMap<String, usize>)> = BTreeMap::new();
    for record in &log.records {
        let pattern = composition_pattern(&record.ordered_labels, space);
        let bucket = buckets.entry(pattern).or_default();
        bucket.0 += 1;
        if space.class_of_name(&record.predicted).is_some() {
            *bucket.1.entry(record.predicted.clone()).or_insert(0) += 1;
        }
    }
    Ok(buckets
        .into_iter()
        .map(|(pattern, (total, counts))| {
            let fractions = space
                .names()
                .iter()
                .map(|name| {
                    let count = counts.get(name).copied().unwrap_or(0);
                    (name.clone(), count as f64 / total as f64)
                })
                .collect();
            (pattern, fractions)
        })
        .collect())
}

// ─── Recency bias ────────────────────────────────────────────────────────────

/// Per-position overprediction: the model's repeat rate minus the gold
/// repeat rate, as fractions in [-1, 1].
///
/// For training position `p` (0-indexed from the prompt start), the
/// repeat rate is the fraction of records whose prediction equals the
/// training answer at `p`; the gold repeat rate substitutes the gold
/// answer. Matching is exact string equality after trimming surrounding
/// whitespace; when several positions share an answer, a match credits
/// all of them. All records must have the same number of positions.
pub fn recency_overprediction(log: &PredictionLog) -> Result<Vec<f64>, DiagnosticsError> {
    log.require_nonempty()?;
    let positions = log.records[0].ordered_labels.len();
    let mut predicted_repeats = vec![0usize; positions];
    let mut gold_repeats = vec![0usize; positions];
    for (index, record) in log.records.iter().enumerate() {
        if record.ordered_labels.len() != positions {
            return Err(DiagnosticsError::HeterogeneousPositions {
                index,
                expected: positions,
                found: record.ordered_labels.len(),
            });
        }
        let predicted = record.predicted.trim();
        let gold = record.gold.trim();
        for (p, answer) in record.ordered_labels.iter().enumerate() {
            let answer = answer.trim();
            if predicted == answer {
                predicted_repeats[p] += 1;
            }
            if gold == answer {
                gold_repeats[p] += 1;
            }
        }
    }
    let n = log.records.len() as f64;
    Ok(predicted_repeats
        .iter()
        .zip(&gold_repeats)
        .map(|(&pred, &gold)| pred as f64 / n - gold as f64 / n)
        .collect())
}

// ─── Common token bias ───────────────────────────────────────────────────────

/// Pearson correlation coefficient. Errors when either side has zero
/// variance (the quotient is undefined).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, DiagnosticsError> {
    assert_eq!(xs.len(), ys.len(), "pearson inputs must have equal length");
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(DiagnosticsError::ZeroVariance("x"));
    }
    if var_y == 0.0 {
        return Err(DiagnosticsError::ZeroVariance("y"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Pearson r between each class's prediction rate in the log and its
/// label name's frequency in a user-supplied table (e.g. corpus counts).
/// Requires at least 3 classes for the correlation to say anything.
pub fn common_token_correlation(
    log: &PredictionLog,
    freq_table: &BTreeMap<String, f64>,
) -> Result<f64, DiagnosticsError> {
    log.require_nonempty()?;
    let space = log.require_label_space()?;
    if space.len() < 3 {
        return Err(DiagnosticsError::TooFewClasses(space.len()));
    }
    let mut counts = vec![0usize; space.len()];
    for record in &log.records {
        if let Some(class) = space.class_of_name(&record.predicted) {
            counts[class.0] += 1;
        }
    }
    let n = log.records.len() as f64;
    let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let freqs: Vec<f64> = space
        .names()
        .iter()
        .map(|name| {
            freq_table
                .get(name)
                .copied()
                .ok_or_else(|| DiagnosticsError::MissingFrequency(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    pearson(&freqs, &rates)
}

// ─── Threshold scan ──────────────────────────────────────────────────────────

/// Candidate decision thresholds for a set of probabilities: the
/// midpoints between consecutive sorted distinct values, plus virtual
/// endpoints halfway to 0 and to 1. Every achievable accuracy of a
/// threshold rule is realized by one of these.
pub fn threshold_candidates(probs: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = probs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite probs"));
    sorted.dedup();
    if sorted.is_empty() {
        return vec![0.5];
    }
    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    candidates.push(sorted[0] / 2.0);
    for pair in sorted.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push((sorted[sorted.len() - 1] + 1.0) / 2.0);
    candidates
}

/// Best decision threshold for a binary log: the candidate maximizing
/// accuracy of "predict `positive` iff p(positive) > t", ties resolved
/// toward the smallest threshold. Returns `(threshold, accuracy)`.
pub fn threshold_scan(
    log: &PredictionLog,
    positive: ClassId,
) -> Result<(f64, f64), DiagnosticsError> {
    log.require_nonempty()?;
    let space = log.require_label_space()?;
    if space.len() != 2 {
        return Err(DiagnosticsError::NotBinary(space.len()));
    }
    if positive.0 >= space.len() {
        return Err(DiagnosticsError::UnknownClass(positive));
    }
    let positive_name = space.name(positive);
    let mut points = Vec::with_capacity(log.records.len());
    for (index, record) in log.records.iter().enumerate() {
        let raw = record
            .raw
            .as_ref()
            .ok_or(DiagnosticsError::MissingRaw(index))?;
        points.push((raw.prob(positive), record.gold == positive_name));
    }
    let probs: Vec<f64> = points.iter().map(|(p, _)| *p).collect();
    let mut best: Option<(f64, f64)> = None;
    for t in threshold_candidates(&probs) {
        let correct = points
            .iter()
            .filter(|&&(p, gold_positive)| (p > t) == gold_positive)
            .count();
        let accuracy = correct as f64 / points.len() as f64;
        if best.is_none_or(|(_, best_acc)| accuracy > best_acc) {
            best = Some((t, accuracy));
        }
    }
    Ok(best.expect("candidates are never empty"))
}

// ─── Report assembly ─────────────────────────────────────────────────────────

/// All diagnostics over one log, each present when its preconditions
/// held.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct BiasReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_curve: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recency_overprediction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_token_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_best: Option<ThresholdBest>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdBest {
    pub threshold: f64,
    pub accuracy: f64,
}

impl BiasReport {
    /// Human-readable table; percentages for fractions.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if let Some(curve) = self.majority_curve.as_ref().filter(|c| !c.is_empty()) {
            out.push_str("majority label bias: prediction share by prompt composition\n");
            for (pattern, fractions) in curve {
                let row: Vec<String> = fractions
                    .iter()
                    .map(|(name, f)| format!("{name} {:5.1}%", f * 100.0))
                    .collect();
                out.push_str(&format!("  {pattern:<12} {}\n", row.join("  ")));
            }
        }
        if let Some(over) = self
            .recency_overprediction
            .as_ref()
            .filter(|o| !o.is_empty())
        {
            out.push_str("recency bias: overprediction by training position (pp)\n  ");
            let row: Vec<String> = over
                .iter()
                .enumerate()
                .map(|(i, v)| format!("pos{} {:+.1}", i + 1, v * 100.0))
                .collect();
            out.push_str(&row.join("  "));
            out.push('\n');
        }
        if let Some(r) = self.common_token_r {
            out.push_str(&format!(
                "common token bias: label frequency vs prediction rate, r = {r:.2}\n"
            ));
        }
        if let Some(best) = &self.threshold_best {
            out.push_str(&format!(
                "threshold scan: best threshold {:.2} reaches {:.1}% accuracy\n",
                best.threshold,
                best.accuracy * 100.0
            ));
        }
        if out.is_empty() {
            out.push_str("no diagnostics applicable to this log\n");
        }
        out
    }
}
