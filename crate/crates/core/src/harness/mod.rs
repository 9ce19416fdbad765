//! Evaluation harness: datasets, run records, sweep orchestration,
//! aggregation, and the oracle-calibration upper bound.
//!
//! The unit of work is a *cell*: one combination of format, shot count,
//! training set, permutation, content-free input set, and calibration
//! mode. Evaluating a cell produces one [`records::RunRecord`] per test
//! item. Cells are enumerated up front (so budgets are enforced before
//! any backend call), evaluated with bounded parallelism over items, and
//! persisted through a single append-only writer, which makes sweeps
//! resumable at (cell, item) granularity.

pub mod dataset;
pub mod oracle;
pub mod records;
pub mod sweep;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{greedy_complete, label_probs, BackendError, LmBackend, LmQuery};
use crate::calibration::{
    apply_calibration, estimate_content_free, fit_additive, fit_diagonal, predict,
    renormalize_label_probs, CalibrationError, CalibrationMode, CalibrationParams,
    ContentFreeEstimate, ProbVector, TokenCalibration,
};
use crate::prompt::{render, LabeledExample, PromptError, PromptFormat, PromptSpec};

pub use dataset::{DatasetItem, DatasetManifest, Splits, TaskDataset, TaskKind};
pub use oracle::{oracle_calibrate, OracleFit};
pub use records::{
    accuracy, existing_keys, read_records, to_prediction_log, CellKey, Outcome, RecordWriter,
    RunRecord,
};
pub use sweep::{
    aggregate, plan_cells, run_sweep, summary_csv, GroupKey, PermutationAxis, PlannedCell,
    SummaryRow, SweepAxes, SweepConfig, SweepOutcome,
};

/// Generation stop string; completions run until the model emits a
/// newline.
pub const GENERATION_STOP: &str = "\n";

/// Token budget per generated answer.
pub const MAX_GENERATION_TOKENS: usize = 16;

/// A run is marked invalid when more than this fraction of items were
/// quarantined by backend failures.
pub const FAILURE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path} line {line}: {source}")]
    ParseLine {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("encoding record: {0}")]
    Encode(serde_json::Error),
    #[error("writing records: {0}")]
    Write(String),
    #[error("duplicate item id `{0}`")]
    DuplicateItemId(String),
    #[error("unknown item id `{0}`")]
    UnknownItemId(String),
    #[error("item `{id}` appears in both the {a} and {b} splits")]
    OverlappingSplits {
        id: String,
        a: &'static str,
        b: &'static str,
    },
    #[error("item `{id}` has no gold field for its task kind")]
    ItemMissingGold { id: String },
    #[error("classification dataset requires label_names")]
    MissingLabelSpace,
    #[error("item `{id}` gold label `{label}` is outside the label space")]
    GoldOutsideLabelSpace { id: String, label: String },
    #[error("cf_template must contain the {{cf}} slot exactly once")]
    CfTemplateSlot,
    #[error("sweep would run {cells} cells, over the budget of {budget}")]
    BudgetExceeded { cells: usize, budget: usize },
    #[error("axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("the {0} split is empty but required here")]
    EmptySplit(&'static str),
    #[error("oracle calibration requires raw classification records on a validation split")]
    OracleNeedsValidation,
    #[error("oracle calibration is defined for classification tasks only")]
    OracleUnsupportedForGeneration,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn parse(path: &Path, source: serde_json::Error) -> Self {
        Self::Parse {
            path: path.display().to_string(),
            source,
        }
    }

    fn parse_line(path: &Path, line: usize, source: serde_json::Error) -> Self {
        Self::ParseLine {
            path: path.display().to_string(),
            line,
            source,
        }
    }
}

/// Exact-match metric for generated spans: string equality after
/// trimming surrounding whitespace.
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    prediction.trim() == gold.trim()
}

/// One sweep cell, fully resolved: the format, the permuted training
/// examples, the content-free inputs (already passed through the
/// dataset's cf template), and the items to evaluate.
#[derive(Debug, Clone)]
pub struct EvalCell {
    pub run_id: String,
    pub seed: u64,
    pub format: PromptFormat,
    pub examples: Vec<LabeledExample>,
    pub shots: usize,
    pub training_set_id: usize,
    pub permutation_index: u64,
    pub cf_set_id: usize,
    pub cf_inputs: Vec<String>,
    pub calibration_mode: CalibrationMode,
    pub test_items: Vec<DatasetItem>,
}

impl EvalCell {
    fn base_record(&self, backend_id: &str, item: &DatasetItem, outcome: Outcome) -> RunRecord {
        RunRecord {
            run_id: self.run_id.clone(),
            seed: self.seed,
            backend_id: backend_id.to_string(),
            format_id: self.format.format_id.clone(),
            shots: self.shots,
            training_set_id: self.training_set_id,
            permutation_index: self.permutation_index,
            cf_set_id: self.cf_set_id,
            calibration_mode: self.calibration_mode,
            test_item_id: item.id.clone(),
            example_labels: self.examples.iter().map(|e| e.label.clone()).collect(),
            gold: item.gold.clone(),
            outcome,
        }
    }

    fn spec_for(&self, dataset: &TaskDataset, test_input: &str) -> PromptSpec {
        PromptSpec {
            format: self.format.clone(),
            examples: self.examples.clone(),
            test_input: test_input.to_string(),
            label_space: dataset.label_space.clone(),
        }
    }
}

/// Content-free estimate for a cell. Estimates are contextual: they
/// depend on the format, training set, and permutation, so each cell
/// computes its own (one backend call per content-free string).
pub fn cell_content_free_estimate(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
) -> Result<ContentFreeEstimate, CalibrationError> {
    let spec = cell.spec_for(dataset, "placeholder");
    let cf_inputs: Vec<String> = cell
        .cf_inputs
        .iter()
        .map(|cf| dataset.cf_input(cf))
        .collect();
    estimate_content_free(backend, &spec, &cf_inputs)
}

fn classification_params(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
    oracle_params: Option<&CalibrationParams>,
) -> Result<Option<CalibrationParams>, HarnessError> {
    match cell.calibration_mode {
        CalibrationMode::None => Ok(None),
        CalibrationMode::Diagonal => {
            let estimate = cell_content_free_estimate(backend, dataset, cell)?;
            Ok(Some(fit_diagonal(&estimate.ensemble)?))
        }
        CalibrationMode::Additive => {
            let estimate = cell_content_free_estimate(backend, dataset, cell)?;
            Ok(Some(fit_additive(&estimate.ensemble)))
        }
        CalibrationMode::Oracle => oracle_params
            .cloned()
            .map(Some)
            .ok_or(HarnessError::OracleNeedsValidation),
    }
}

/// Evaluates a classification cell: one record per test item, in item
/// order. Backend failures quarantine the item as a `Failed` record; a
/// failed content-free estimate quarantines the whole cell.
pub fn evaluate_classification(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
    oracle_params: Option<&CalibrationParams>,
) -> Result<Vec<RunRecord>, HarnessError> {
    if dataset.label_space.is_none() {
        return Err(HarnessError::MissingLabelSpace);
    }
    let params = match classification_params(backend, dataset, cell, oracle_params) {
        Ok(params) => params,
        // A cell whose calibration could not be fitted is quarantined
        // wholesale; oracle misconfiguration is a caller bug instead.
        Err(HarnessError::OracleNeedsValidation) => {
            return Err(HarnessError::OracleNeedsValidation)
        }
        Err(err) => {
            let message = err.to_string();
            return Ok(cell
                .test_items
                .iter()
                .map(|item| {
                    cell.base_record(
                        backend.id(),
                        item,
                        Outcome::Failed {
                            error: message.clone(),
                        },
                    )
                })
                .collect());
        }
    };
    let records: Vec<RunRecord> = cell
        .test_items
        .par_iter()
        .map(|item| {
            let outcome = classify_item(backend, dataset, cell, params.as_ref(), item)
                .unwrap_or_else(|err| Outcome::Failed {
                    error: err.to_string(),
                });
            cell.base_record(backend.id(), item, outcome)
        })
        .collect();
    Ok(records)
}

fn classify_item(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
    params: Option<&CalibrationParams>,
    item: &DatasetItem,
) -> Result<Outcome, HarnessError> {
    let space = dataset.label_space.as_ref().expect("checked by caller");
    let spec = cell.spec_for(dataset, &item.text);
    let prompt = render(&spec)?;
    let query = LmQuery::new(prompt).with_context(&spec);
    let raw_probs = label_probs(backend, &query, space)?;
    let raw = renormalize_label_probs(&raw_probs)?;
    let calibrated = params.map(|p| apply_calibration(p, &raw)).transpose()?;
    let decided = calibrated.as_ref().unwrap_or(&raw);
    let prediction = space.name(predict(decided)).to_string();
    let correct = prediction == item.gold;
    Ok(Outcome::Classified {
        raw,
        calibrated,
        prediction,
        correct,
    })
}

/// Content-free first-token estimate for a generation cell: the mean of
/// the per-input truncated first-token distributions, over the union of
/// their tokens, not renormalized.
pub fn cell_content_free_first_token(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
) -> Result<Vec<(String, f64)>, HarnessError> {
    let mut per_input = Vec::with_capacity(cell.cf_inputs.len());
    let mut last_err: Option<BackendError> = None;
    for cf in &cell.cf_inputs {
        let probe_input = dataset.cf_input(cf);
        let spec = cell.spec_for(dataset, &probe_input);
        let prompt = render(&spec)?;
        let query = LmQuery::new(prompt).with_context(&spec);
        match backend.next_token(&query) {
            Ok(dist) => per_input.push(dist.top().to_vec()),
            Err(err) => last_err = Some(err),
        }
    }
    if per_input.is_empty() {
        return Err(CalibrationError::AllContentFreeInputsFailed {
            count: cell.cf_inputs.len(),
            last: last_err.expect("no successes implies a failure"),
        }
        .into());
    }
    Ok(crate::calibration::ensemble_token_distributions(&per_input))
}

/// Evaluates a generation cell. Calibration re-ranks the first output
/// token over its truncated distribution; the remaining tokens are
/// greedy and uncalibrated. Exact match is scored after whitespace
/// trimming.
pub fn evaluate_generation(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
) -> Result<Vec<RunRecord>, HarnessError> {
    let token_cal = match cell.calibration_mode {
        CalibrationMode::None => None,
        CalibrationMode::Diagonal => {
            match cell_content_free_first_token(backend, dataset, cell)
                .and_then(|cf| TokenCalibration::fit_diagonal(&cf).map_err(Into::into))
            {
                Ok(cal) => Some(cal),
                Err(err) => return Ok(quarantine_cell(backend, cell, &err.to_string())),
            }
        }
        CalibrationMode::Additive => match cell_content_free_first_token(backend, dataset, cell) {
            Ok(cf) => Some(TokenCalibration::fit_additive(&cf)),
            Err(err) => return Ok(quarantine_cell(backend, cell, &err.to_string())),
        },
        CalibrationMode::Oracle => return Err(HarnessError::OracleUnsupportedForGeneration),
    };
    let records: Vec<RunRecord> = cell
        .test_items
        .par_iter()
        .map(|item| {
            let outcome = generate_item(backend, dataset, cell, token_cal.as_ref(), item)
                .unwrap_or_else(|err| Outcome::Failed {
                    error: err.to_string(),
                });
            cell.base_record(backend.id(), item, outcome)
        })
        .collect();
    Ok(records)
}

fn quarantine_cell(backend: &dyn LmBackend, cell: &EvalCell, error: &str) -> Vec<RunRecord> {
    cell.test_items
        .iter()
        .map(|item| {
            cell.base_record(
                backend.id(),
                item,
                Outcome::Failed {
                    error: error.to_string(),
                },
            )
        })
        .collect()
}

fn generate_item(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
    token_cal: Option<&TokenCalibration>,
    item: &DatasetItem,
) -> Result<Outcome, HarnessError> {
    let spec = cell.spec_for(dataset, &item.text);
    let prompt = render(&spec)?;
    let query = LmQuery::new(prompt).with_context(&spec);
    let dist = backend.next_token(&query)?;
    let first_token_top = dist.top().to_vec();
    let remainder_mass = dist.remainder_mass();

    let (first_token, calibrated_first) = match token_cal {
        None => (dist.argmax().map(str::to_string), None),
        Some(cal) => {
            let tokens: Vec<String> = first_token_top.iter().map(|(t, _)| t.clone()).collect();
            let params = cal.params_for(&tokens);
            let p = ProbVector::new(
                first_token_top
                    .iter()
                    .enumerate()
                    .map(|(i, (_, prob))| (crate::ClassId(i), *prob))
                    .collect(),
                remainder_mass,
            )?;
            let q = apply_calibration(&params, &p)?;
            let winner = predict(&q);
            let calibrated: Vec<(String, f64)> = tokens.iter().cloned().zip(q.probs()).collect();
            (tokens.get(winner.0).cloned(), Some(calibrated))
        }
    };

    let prediction = match first_token {
        None => String::new(),
        Some(token) if token == GENERATION_STOP => String::new(),
        Some(token) => {
            let completion = greedy_complete(
                backend,
                &query.clone().with_generated(vec![token]),
                GENERATION_STOP,
                MAX_GENERATION_TOKENS,
            )?;
            completion.text
        }
    };
    let correct = exact_match(&prediction, &item.gold);
    Ok(Outcome::Generated {
        first_token_top,
        remainder_mass,
        calibrated_first,
        prediction,
        correct,
    })
}

/// Validation pairs (raw probabilities, gold class) extracted from
/// classification records, for the oracle search.
pub fn validation_pairs(
    records: &[RunRecord],
    space: &crate::prompt::LabelSpace,
) -> Vec<(ProbVector, crate::ClassId)> {
    records
        .iter()
        .filter_map(|record| match &record.outcome {
            Outcome::Classified { raw, .. } => space
                .class_of_name(&record.gold)
                .map(|gold| (raw.clone(), gold)),
            _ => None,
        })
        .collect()
}

/// Per-cell accuracy rows used by aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellAccuracy {
    pub key: CellKey,
    pub accuracy: f64,
    pub scored: usize,
    pub failed: usize,
}

/// Groups records by cell and computes each cell's accuracy. Cells with
/// no scored records are dropped (their failures are still counted by
/// callers via the records themselves).
pub fn cell_accuracies(records: &[RunRecord]) -> Vec<CellAccuracy> {
    let mut by_cell: std::collections::BTreeMap<CellKey, (usize, usize, usize)> =
        std::collections::BTreeMap::new();
    for record in records {
        let slot = by_cell.entry(record.cell_key()).or_default();
        match record.correct() {
            Some(true) => {
                slot.0 += 1;
                slot.1 += 1;
            }
            Some(false) => slot.1 += 1,
            None => slot.2 += 1,
        }
    }
    by_cell
        .into_iter()
        .filter(|(_, (_, scored, _))| *scored > 0)
        .map(|(key, (correct, scored, failed))| CellAccuracy {
            key,
            accuracy: correct as f64 / scored as f64,
            scored,
            failed,
        })
        .collect()
}
