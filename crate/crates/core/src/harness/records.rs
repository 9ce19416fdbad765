//! Run records: one line-delimited record per evaluated test item.
//!
//! Records carry everything needed to recompute metrics and diagnostics
//! offline, and deliberately nothing volatile (no timestamps, no host
//! names), so a rerun with the same seed and fixtures is byte-identical.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::calibration::{CalibrationMode, ProbVector};
use crate::diagnostics::{LogRecord, PredictionLog};
use crate::prompt::LabelSpace;

/// Identity of a sweep cell: every axis value pinned.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub format_id: String,
    pub shots: usize,
    pub training_set_id: usize,
    pub permutation_index: u64,
    pub cf_set_id: usize,
    pub calibration_mode: CalibrationMode,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "format={} shots={} set={} perm={} cf_set={} mode={}",
            self.format_id,
            self.shots,
            self.training_set_id,
            self.permutation_index,
            self.cf_set_id,
            self.calibration_mode
        )
    }
}

/// What happened for one test item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Classified {
        /// Renormalized label probabilities.
        raw: ProbVector,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calibrated: Option<ProbVector>,
        prediction: String,
        correct: bool,
    },
    Generated {
        /// Truncated first-token distribution, sorted.
        first_token_top: Vec<(String, f64)>,
        remainder_mass: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calibrated_first: Option<Vec<(String, f64)>>,
        prediction: String,
        correct: bool,
    },
    /// Backend failure; quarantined, excluded from accuracy.
    Failed { error: String },
}

/// One evaluated test item under one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub backend_id: String,
    pub format_id: String,
    pub shots: usize,
    pub training_set_id: usize,
    pub permutation_index: u64,
    pub cf_set_id: usize,
    pub calibration_mode: CalibrationMode,
    pub test_item_id: String,
    /// Training answers in prompt order; lets diagnostics run from the
    /// records file alone.
    pub example_labels: Vec<String>,
    pub gold: String,
    pub outcome: Outcome,
}

impl RunRecord {
    pub fn cell_key(&self) -> CellKey {
        CellKey {
            format_id: self.format_id.clone(),
            shots: self.shots,
            training_set_id: self.training_set_id,
            permutation_index: self.permutation_index,
            cf_set_id: self.cf_set_id,
            calibration_mode: self.calibration_mode,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.outcome, Outcome::Failed { .. })
    }

    pub fn correct(&self) -> Option<bool> {
        match &self.outcome {
            Outcome::Classified { correct, .. } | Outcome::Generated { correct, .. } => {
                Some(*correct)
            }
            Outcome::Failed { .. } => None,
        }
    }

    pub fn prediction(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Classified { prediction, .. } | Outcome::Generated { prediction, .. } => {
                Some(prediction)
            }
            Outcome::Failed { .. } => None,
        }
    }
}

/// Append-only, flush-per-record writer; the single serialization point
/// for concurrent sweeps.
pub struct RecordWriter {
    sink: BufWriter<File>,
    written: usize,
}

impl RecordWriter {
    pub fn create(path: &Path, append: bool) -> Result<Self, HarnessError> {
        let file = if append {
            File::options().create(true).append(true).open(path)
        } else {
            File::create(path)
        }
        .map_err(|e| HarnessError::io(path, e))?;
        Ok(Self {
            sink: BufWriter::new(file),
            written: 0,
        })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<(), HarnessError> {
        let line = serde_json::to_string(record).map_err(HarnessError::Encode)?;
        writeln!(self.sink, "{line}").map_err(|e| HarnessError::Write(e.to_string()))?;
        self.sink
            .flush()
            .map_err(|e| HarnessError::Write(e.to_string()))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }
}

/// Reads a records file; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(line).map_err(|e| HarnessError::parse_line(path, i + 1, e))?,
        );
    }
    Ok(records)
}

/// Keys of already-evaluated (cell, item) pairs, for resume.
pub fn existing_keys(records: &[RunRecord]) -> BTreeSet<(CellKey, String)> {
    records
        .iter()
        .map(|r| (r.cell_key(), r.test_item_id.clone()))
        .collect()
}

/// Mean correctness over scored records and the quarantined-failure
/// count. `None` accuracy when nothing was scored.
pub fn accuracy(records: &[RunRecord]) -> (Option<f64>, usize) {
    let mut correct = 0usize;
    let mut scored = 0usize;
    let mut failed = 0usize;
    for record in records {
        match record.correct() {
            Some(c) => {
                scored += 1;
                correct += c as usize;
            }
            None => failed += 1,
        }
    }
    let acc = (scored > 0).then(|| correct as f64 / scored as f64);
    (acc, failed)
}

/// Converts scored records into the diagnostics log shape. Failed
/// records are dropped.
pub fn to_prediction_log(records: &[RunRecord], label_space: Option<LabelSpace>) -> PredictionLog {
    let log_records = records
        .iter()
        .filter_map(|record| {
            let predicted = record.prediction()?.to_string();
            let raw = match &record.outcome {
                Outcome::Classified { raw, .. } => Some(raw.clone()),
                _ => None,
            };
            Some(LogRecord {
                ordered_labels: record.example_labels.clone(),
                predicted,
                gold: record.gold.clone(),
                raw,
            })
        })
        .collect();
    PredictionLog {
        records: log_records,
        label_space,
    }
}
