//! Factorial sweeps over prompt design choices.
//!
//! A sweep enumerates cells (format × shots × training set × ordering ×
//! content-free set × calibration mode), checks the cell count against
//! the budget before touching the backend, then evaluates cells in a
//! deterministic order. Every random choice is derived from the config
//! seed and a structural tag, so the same config replays to the same
//! records; persisted records double as a resume log.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::LmBackend;
use crate::calibration::{
    fit_additive, fit_diagonal, CalibrationMode, CalibrationParams, DEFAULT_CF_INPUTS,
};
use crate::prompt::{
    apply_permutation, factorial, find_format, nth_permutation, sample_training_sets, CorpusFormat,
    LabeledExample, PromptError, PromptFormat, PERMUTATION_CAP,
};
use crate::seeding::derive_seed;

use super::records::{existing_keys, CellKey, RecordWriter, RunRecord};
use super::{
    cell_accuracies, cell_content_free_estimate, evaluate_classification, evaluate_generation,
    oracle_calibrate, validation_pairs, DatasetItem, EvalCell, HarnessError, TaskDataset, TaskKind,
};

/// Which orderings of each training set a sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PermutationAxis {
    /// Only the order in which the set was sampled (index 0).
    #[default]
    Identity,
    /// Every ordering; requires shots ≤ [`PERMUTATION_CAP`].
    All,
    /// A seeded sample of distinct orderings (all of them when fewer
    /// exist).
    Sample(usize),
}

/// Config form: the strings `"identity"` and `"all"`, or an integer
/// sample count.
impl Serialize for PermutationAxis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PermutationAxis::Identity => s.serialize_str("identity"),
            PermutationAxis::All => s.serialize_str("all"),
            PermutationAxis::Sample(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for PermutationAxis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(PermutationAxis::Sample(n)),
            Raw::Name(name) => match name.as_str() {
                "identity" => Ok(PermutationAxis::Identity),
                "all" => Ok(PermutationAxis::All),
                other => Err(serde::de::Error::custom(format!(
                    "expected \"identity\", \"all\", or a sample count, got `{other}`"
                ))),
            },
        }
    }
}

/// The axes of a sweep's factorial grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAxes {
    pub format_ids: Vec<String>,
    pub shots: Vec<usize>,
    #[serde(default = "default_n_training_sets")]
    pub n_training_sets: usize,
    #[serde(default)]
    pub permutations: PermutationAxis,
    #[serde(default = "default_cf_input_sets")]
    pub cf_input_sets: Vec<Vec<String>>,
    pub calibration_modes: Vec<CalibrationMode>,
}

fn default_n_training_sets() -> usize {
    1
}

fn default_cf_input_sets() -> Vec<Vec<String>> {
    vec![DEFAULT_CF_INPUTS.iter().map(|s| s.to_string()).collect()]
}

/// A full sweep description. `budget` caps the number of cells; the cap
/// is enforced during planning, before any backend call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub run_id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub axes: SweepAxes,
}

/// One enumerated cell: everything needed to evaluate it except the
/// test items.
#[derive(Debug, Clone)]
pub struct PlannedCell {
    pub format: PromptFormat,
    pub examples: Vec<LabeledExample>,
    pub shots: usize,
    pub training_set_id: usize,
    pub permutation_index: u64,
    pub cf_set_id: usize,
    pub cf_inputs: Vec<String>,
    pub calibration_mode: CalibrationMode,
}

impl PlannedCell {
    pub fn cell_key(&self) -> CellKey {
        CellKey {
            format_id: self.format.format_id.clone(),
            shots: self.shots,
            training_set_id: self.training_set_id,
            permutation_index: self.permutation_index,
            cf_set_id: self.cf_set_id,
            calibration_mode: self.calibration_mode,
        }
    }

    fn eval_cell(&self, config: &SweepConfig, test_items: Vec<DatasetItem>) -> EvalCell {
        EvalCell {
            run_id: config.run_id.clone(),
            seed: config.seed,
            format: self.format.clone(),
            examples: self.examples.clone(),
            shots: self.shots,
            training_set_id: self.training_set_id,
            permutation_index: self.permutation_index,
            cf_set_id: self.cf_set_id,
            cf_inputs: self.cf_inputs.clone(),
            calibration_mode: self.calibration_mode,
            test_items,
        }
    }
}

/// Training example sets for one shot count, shared across formats.
///
/// Zero shots yields a single empty set. Sets are drawn from the train
/// split with a seed derived from the shot count, so adding formats or
/// modes to a sweep never reshuffles the examples.
pub fn training_sets(
    dataset: &TaskDataset,
    shots: usize,
    n_sets: usize,
    seed: u64,
) -> Result<Vec<Vec<LabeledExample>>, HarnessError> {
    if shots == 0 {
        return Ok(vec![Vec::new()]);
    }
    let pool: Vec<LabeledExample> = dataset
        .train_pool()
        .into_iter()
        .map(|item| LabeledExample {
            input: item.text,
            label: item.gold,
        })
        .collect();
    if pool.is_empty() {
        return Err(HarnessError::EmptySplit("train"));
    }
    let set_seed = derive_seed(seed, &format!("sets/{shots}"));
    Ok(sample_training_sets(&pool, shots, n_sets, set_seed)?)
}

/// Permutation indices to evaluate for one (format, shots, set) cell
/// group. At most one ordering exists below two shots, so the axis
/// collapses to the identity there.
fn permutation_axis_indices(
    axis: PermutationAxis,
    format_id: &str,
    shots: usize,
    set_id: usize,
    seed: u64,
) -> Result<Vec<u64>, HarnessError> {
    if shots < 2 {
        return Ok(vec![0]);
    }
    match axis {
        PermutationAxis::Identity => Ok(vec![0]),
        PermutationAxis::All => {
            if shots > PERMUTATION_CAP {
                return Err(PromptError::PermutationCapExceeded { n: shots }.into());
            }
            Ok((0..factorial(shots)).collect())
        }
        PermutationAxis::Sample(m) => {
            if shots > PERMUTATION_CAP {
                return Err(PromptError::PermutationCapExceeded { n: shots }.into());
            }
            let count = factorial(shots) as usize;
            if m >= count {
                return Ok((0..count as u64).collect());
            }
            let tag = format!("perms/{format_id}/{shots}/{set_id}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag));
            let mut picked: Vec<u64> = rand::seq::index::sample(&mut rng, count, m)
                .into_iter()
                .map(|i| i as u64)
                .collect();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

/// Enumerates the full factorial grid and enforces the budget. No
/// backend calls happen here; a plan that exceeds the budget fails
/// before any query is sent.
pub fn plan_cells(
    dataset: &TaskDataset,
    corpus: &[CorpusFormat],
    config: &SweepConfig,
) -> Result<Vec<PlannedCell>, HarnessError> {
    let axes = &config.axes;
    if axes.format_ids.is_empty() {
        return Err(HarnessError::EmptyAxis("format_ids"));
    }
    if axes.shots.is_empty() {
        return Err(HarnessError::EmptyAxis("shots"));
    }
    if axes.n_training_sets == 0 {
        return Err(HarnessError::EmptyAxis("n_training_sets"));
    }
    if axes.cf_input_sets.is_empty() {
        return Err(HarnessError::EmptyAxis("cf_input_sets"));
    }
    if axes.calibration_modes.is_empty() {
        return Err(HarnessError::EmptyAxis("calibration_modes"));
    }
    if dataset.kind == TaskKind::Generation
        && axes.calibration_modes.contains(&CalibrationMode::Oracle)
    {
        return Err(HarnessError::OracleUnsupportedForGeneration);
    }
    let formats: Vec<&CorpusFormat> = axes
        .format_ids
        .iter()
        .map(|id| find_format(corpus, id))
        .collect::<Result<_, _>>()?;

    let mut cells = Vec::new();
    for &shots in &axes.shots {
        let sets = training_sets(dataset, shots, axes.n_training_sets, config.seed)?;
        for format in &formats {
            for (set_id, set) in sets.iter().enumerate() {
                let perm_indices = permutation_axis_indices(
                    axes.permutations,
                    &format.format.format_id,
                    shots,
                    set_id,
                    config.seed,
                )?;
                for perm_index in perm_indices {
                    let perm = nth_permutation(set.len(), perm_index)?;
                    let examples = apply_permutation(set, &perm)?;
                    for (cf_set_id, cf_inputs) in axes.cf_input_sets.iter().enumerate() {
                        for &mode in &axes.calibration_modes {
                            cells.push(PlannedCell {
                                format: format.format.clone(),
                                examples: examples.clone(),
                                shots,
                                training_set_id: set_id,
                                permutation_index: perm_index,
                                cf_set_id,
                                cf_inputs: cf_inputs.clone(),
                                calibration_mode: mode,
                            });
                        }
                    }
                }
            }
        }
    }
    if let Some(budget) = config.budget {
        if cells.len() > budget {
            return Err(HarnessError::BudgetExceeded {
                cells: cells.len(),
                budget,
            });
        }
    }
    Ok(cells)
}

/// What a sweep run did.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells_planned: usize,
    /// Cells whose records were all already present.
    pub cells_skipped: usize,
    pub records_written: usize,
    /// Records written with a failed outcome.
    pub failed_records: usize,
    /// True when the run stopped early on a cancellation signal.
    pub cancelled: bool,
}

impl SweepOutcome {
    /// Fraction of this run's written records that failed.
    pub fn failure_fraction(&self) -> f64 {
        if self.records_written == 0 {
            0.0
        } else {
            self.failed_records as f64 / self.records_written as f64
        }
    }
}

/// Runs a planned sweep end to end.
///
/// `existing` records are treated as already-done work: a (cell, item)
/// pair present there is not re-evaluated, and a fully-present cell
/// triggers no backend calls at all. `cancel` is checked between cells;
/// a cancelled run finishes the in-flight cell, flushes its records, and
/// returns with `cancelled` set, so a later resume completes the sweep.
pub fn run_sweep(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    corpus: &[CorpusFormat],
    config: &SweepConfig,
    writer: &mut RecordWriter,
    existing: &[RunRecord],
    cancel: &AtomicBool,
) -> Result<SweepOutcome, HarnessError> {
    let cells = plan_cells(dataset, corpus, config)?;
    let done: BTreeSet<(CellKey, String)> = existing_keys(existing);
    let test_items = dataset.test_items();
    if test_items.is_empty() {
        return Err(HarnessError::EmptySplit("test"));
    }

    let mut outcome = SweepOutcome {
        cells_planned: cells.len(),
        ..Default::default()
    };
    for planned in &cells {
        if cancel.load(Ordering::SeqCst) {
            outcome.cancelled = true;
            break;
        }
        let key = planned.cell_key();
        let missing: Vec<DatasetItem> = test_items
            .iter()
            .filter(|item| !done.contains(&(key.clone(), item.id.clone())))
            .cloned()
            .collect();
        if missing.is_empty() {
            outcome.cells_skipped += 1;
            continue;
        }
        let cell = planned.eval_cell(config, missing);
        let records = evaluate_cell(backend, dataset, &cell)?;
        for record in &records {
            writer.append(record)?;
            outcome.records_written += 1;
            if record.is_failed() {
                outcome.failed_records += 1;
            }
        }
    }
    Ok(outcome)
}

/// Evaluates one cell, dispatching on task kind and handling the oracle
/// mode's validation-fitting step.
pub fn evaluate_cell(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
) -> Result<Vec<RunRecord>, HarnessError> {
    match dataset.kind {
        TaskKind::Generation => evaluate_generation(backend, dataset, cell),
        TaskKind::Classification => {
            if cell.calibration_mode == CalibrationMode::Oracle {
                let fit = fit_oracle_for_cell(backend, dataset, cell)?;
                match fit {
                    Some(params) => evaluate_classification(backend, dataset, cell, Some(&params)),
                    // No validation pair survived the backend: the cell
                    // cannot be fitted, so its items are quarantined.
                    None => Ok(cell
                        .test_items
                        .iter()
                        .map(|item| {
                            let outcome = super::records::Outcome::Failed {
                                error: "oracle fit failed: no validation predictions".to_string(),
                            };
                            cell_record(cell, backend.id(), item, outcome)
                        })
                        .collect()),
                }
            } else {
                evaluate_classification(backend, dataset, cell, None)
            }
        }
    }
}

fn cell_record(
    cell: &EvalCell,
    backend_id: &str,
    item: &DatasetItem,
    outcome: super::records::Outcome,
) -> RunRecord {
    RunRecord {
        run_id: cell.run_id.clone(),
        seed: cell.seed,
        backend_id: backend_id.to_string(),
        format_id: cell.format.format_id.clone(),
        shots: cell.shots,
        training_set_id: cell.training_set_id,
        permutation_index: cell.permutation_index,
        cf_set_id: cell.cf_set_id,
        calibration_mode: cell.calibration_mode,
        test_item_id: item.id.clone(),
        example_labels: cell.examples.iter().map(|e| e.label.clone()).collect(),
        gold: item.gold.clone(),
        outcome,
    }
}

/// Fits oracle parameters for a cell: the validation split is evaluated
/// uncalibrated under the cell's prompt context, and the search is
/// seeded with the contextual fits so it can never score below them.
fn fit_oracle_for_cell(
    backend: &dyn LmBackend,
    dataset: &TaskDataset,
    cell: &EvalCell,
) -> Result<Option<CalibrationParams>, HarnessError> {
    let space = dataset
        .label_space
        .as_ref()
        .ok_or(HarnessError::MissingLabelSpace)?;
    let validation = dataset.validation_items();
    if validation.is_empty() {
        return Err(HarnessError::EmptySplit("validation"));
    }
    let mut probe = cell.clone();
    probe.calibration_mode = CalibrationMode::None;
    probe.test_items = validation;
    let records = evaluate_classification(backend, dataset, &probe, None)?;
    let pairs = validation_pairs(&records, space);
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut seeds = Vec::new();
    if let Ok(estimate) = cell_content_free_estimate(backend, dataset, cell) {
        if let Ok(diagonal) = fit_diagonal(&estimate.ensemble) {
            seeds.push(diagonal);
        }
        seeds.push(fit_additive(&estimate.ensemble));
    }
    let fit = oracle_calibrate(&pairs, space.len(), &seeds)?;
    Ok(Some(fit.params))
}

// ─── Aggregation ─────────────────────────────────────────────────────────────

/// Cell-key fields summaries can group by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Format,
    Shots,
    TrainingSet,
    Permutation,
    CfSet,
    CalibrationMode,
}

impl GroupKey {
    pub const ALL: [GroupKey; 6] = [
        GroupKey::Format,
        GroupKey::Shots,
        GroupKey::TrainingSet,
        GroupKey::Permutation,
        GroupKey::CfSet,
        GroupKey::CalibrationMode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GroupKey::Format => "format",
            GroupKey::Shots => "shots",
            GroupKey::TrainingSet => "training_set",
            GroupKey::Permutation => "permutation",
            GroupKey::CfSet => "cf_set",
            GroupKey::CalibrationMode => "calibration_mode",
        }
    }

    fn value(&self, key: &CellKey) -> String {
        match self {
            GroupKey::Format => key.format_id.clone(),
            GroupKey::Shots => key.shots.to_string(),
            GroupKey::TrainingSet => key.training_set_id.to_string(),
            GroupKey::Permutation => key.permutation_index.to_string(),
            GroupKey::CfSet => key.cf_set_id.to_string(),
            GroupKey::CalibrationMode => key.calibration_mode.to_string(),
        }
    }
}

impl std::fmt::Display for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        GroupKey::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown group key `{s}`"))
    }
}

/// Accuracy statistics for one group of cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Group-key name to value, e.g. `{"shots": "4"}`.
    pub group: std::collections::BTreeMap<String, String>,
    /// Number of cells aggregated.
    pub cells: usize,
    pub mean: f64,
    /// Population standard deviation across cell accuracies.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Set when the group holds a single cell, where std is trivially 0.
    pub singleton: bool,
    /// Failed items across the group's cells (excluded from accuracy).
    pub failed_items: usize,
}

/// Groups records by cell, computes per-cell accuracy, then summarizes
/// each group of cells selected by `group_by`. An empty `group_by`
/// yields one row over all cells. The unit of aggregation is the cell:
/// each cell's accuracy counts once regardless of its item count.
pub fn aggregate(records: &[RunRecord], group_by: &[GroupKey]) -> Vec<SummaryRow> {
    let cells = cell_accuracies(records);
    let mut groups: std::collections::BTreeMap<Vec<String>, Vec<&super::CellAccuracy>> =
        std::collections::BTreeMap::new();
    for cell in &cells {
        let group = group_by.iter().map(|k| k.value(&cell.key)).collect();
        groups.entry(group).or_default().push(cell);
    }
    groups
        .into_iter()
        .map(|(values, members)| {
            let accs: Vec<f64> = members.iter().map(|c| c.accuracy).collect();
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            SummaryRow {
                group: group_by
                    .iter()
                    .map(|k| k.name().to_string())
                    .zip(values)
                    .collect(),
                cells: members.len(),
                mean,
                std: var.sqrt(),
                min,
                max,
                singleton: members.len() == 1,
                failed_items: members.iter().map(|c| c.failed).sum(),
            }
        })
        .collect()
}

fn csv_field(value: &str) -> String {
    if value.contains(',') || value.contains('"') || value.contains('\n') {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Renders summary rows as a comma-separated table, group keys first in
/// the order given.
pub fn summary_csv(rows: &[SummaryRow], group_by: &[GroupKey]) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = group_by.iter().map(|k| k.name().to_string()).collect();
    header.extend(
        [
            "cells",
            "mean",
            "std",
            "min",
            "max",
            "singleton",
            "failed_items",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut fields: Vec<String> = group_by
            .iter()
            .map(|k| csv_field(row.group.get(k.name()).map(String::as_str).unwrap_or("")))
            .collect();
        fields.push(row.cells.to_string());
        fields.push(row.mean.to_string());
        fields.push(row.std.to_string());
        fields.push(row.min.to_string());
        fields.push(row.max.to_string());
        fields.push(row.singleton.to_string());
        fields.push(row.failed_items.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockLmConfig};
    use crate::calibration::ProbVector;
    use crate::harness::records::Outcome;
    use crate::harness::Splits;
    use crate::prompt::LabelSpace;

    fn demo_format() -> CorpusFormat {
        serde_json::from_str(
            r#"{
                "format_id": "plain",
                "preamble": "",
                "example_template": "Input: {input}\nLabel: {label}",
                "test_template": "Input: {input}\nLabel:",
                "separator": "\n"
            }"#,
        )
        .unwrap()
    }

    fn demo_dataset(n_train: usize, n_val: usize, n_test: usize) -> TaskDataset {
        let space = LabelSpace::new(vec!["yes".into(), "no".into()]).unwrap();
        let mut items = Vec::new();
        let mut splits = Splits::default();
        let mut push = |prefix: &str, i: usize, split: &mut Vec<String>| {
            let id = format!("{prefix}{i}");
            let label = if i.is_multiple_of(2) { "yes" } else { "no" };
            items.push(DatasetItem {
                id: id.clone(),
                text: format!("{label} item {i}"),
                gold: label.to_string(),
            });
            split.push(id);
        };
        for i in 0..n_train {
            push("tr", i, &mut splits.train);
        }
        for i in 0..n_val {
            push("va", i, &mut splits.validation);
        }
        for i in 0..n_test {
            push("te", i, &mut splits.test);
        }
        TaskDataset::from_parts(TaskKind::Classification, items, Some(space), splits, None).unwrap()
    }

    /// A mock whose signal words decide the answer: inputs containing
    /// "yes" boost the yes token and vice versa.
    fn signal_backend() -> MockBackend {
        let config: MockLmConfig = serde_json::from_str(
            r#"{
                "base_weights": {"yes": 1.0, "no": 1.0},
                "majority_strength": 0.0,
                "recency_decay": 1.0,
                "signal_words": {
                    "yes": {"token": "yes", "weight": 2.0},
                    "no": {"token": "no", "weight": 2.0}
                }
            }"#,
        )
        .unwrap();
        MockBackend::new(config).unwrap()
    }

    fn config(axes: SweepAxes) -> SweepConfig {
        SweepConfig {
            run_id: "test".into(),
            seed: 7,
            budget: None,
            axes,
        }
    }

    fn base_axes() -> SweepAxes {
        SweepAxes {
            format_ids: vec!["plain".into()],
            shots: vec![2],
            n_training_sets: 2,
            permutations: PermutationAxis::All,
            cf_input_sets: vec![vec!["N/A".into()]],
            calibration_modes: vec![CalibrationMode::None, CalibrationMode::Diagonal],
        }
    }

    #[test]
    fn plan_is_the_axis_product() {
        let dataset = demo_dataset(6, 2, 3);
        let corpus = vec![demo_format()];
        // 1 format × 1 shot count × 2 sets × 2! orders × 1 cf set × 2 modes.
        let cells = plan_cells(&dataset, &corpus, &config(base_axes())).unwrap();
        #[allow(clippy::identity_op)]
        let grid = 1 * 1 * 2 * 2 * 1 * 2;
        assert_eq!(cells.len(), grid);
    }

    #[test]
    fn plan_is_deterministic() {
        let dataset = demo_dataset(6, 2, 3);
        let corpus = vec![demo_format()];
        let a = plan_cells(&dataset, &corpus, &config(base_axes())).unwrap();
        let b = plan_cells(&dataset, &corpus, &config(base_axes())).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cell_key(), y.cell_key());
            assert_eq!(x.examples, y.examples);
        }
    }

    #[test]
    fn budget_is_enforced_at_planning() {
        let dataset = demo_dataset(6, 2, 3);
        let corpus = vec![demo_format()];
        let mut cfg = config(base_axes());
        cfg.budget = Some(7);
        match plan_cells(&dataset, &corpus, &cfg) {
            Err(HarnessError::BudgetExceeded {
                cells: 8,
                budget: 7,
            }) => {}
            other => panic!("expected BudgetExceeded, got {other:?}"),
        }
    }

    #[test]
    fn zero_shots_yields_one_empty_set() {
        let dataset = demo_dataset(6, 2, 3);
        let sets = training_sets(&dataset, 0, 5, 7).unwrap();
        assert_eq!(sets, vec![Vec::new()]);
    }

    #[test]
    fn training_sets_are_shared_across_formats() {
        // The set seed depends only on the shot count, so planning with
        // two formats reuses the same example sets for both.
        let dataset = demo_dataset(6, 2, 3);
        let mut second = demo_format();
        second.format.format_id = "second".into();
        let corpus = vec![demo_format(), second];
        let mut axes = base_axes();
        axes.format_ids = vec!["plain".into(), "second".into()];
        axes.permutations = PermutationAxis::Identity;
        axes.calibration_modes = vec![CalibrationMode::None];
        let cells = plan_cells(&dataset, &corpus, &config(axes)).unwrap();
        let by_format: Vec<_> = cells
            .iter()
            .filter(|c| c.format.format_id == "plain")
            .collect();
        let second: Vec<_> = cells
            .iter()
            .filter(|c| c.format.format_id == "second")
            .collect();
        assert_eq!(by_format.len(), second.len());
        for (a, b) in by_format.iter().zip(&second) {
            assert_eq!(a.examples, b.examples);
            assert_eq!(a.training_set_id, b.training_set_id);
        }
    }

    #[test]
    fn sampled_permutations_are_distinct_and_sorted() {
        let picked = permutation_axis_indices(PermutationAxis::Sample(5), "f", 4, 0, 7).unwrap();
        assert_eq!(picked.len(), 5);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert!(picked.iter().all(|&i| i < 24));
    }

    #[test]
    fn oversized_sample_takes_every_permutation() {
        let picked = permutation_axis_indices(PermutationAxis::Sample(100), "f", 3, 0, 7).unwrap();
        assert_eq!(picked, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn sweep_writes_one_record_per_cell_item() {
        let dataset = demo_dataset(6, 2, 3);
        let corpus = vec![demo_format()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut writer = RecordWriter::create(&path, false).unwrap();
        let backend = signal_backend();
        let outcome = run_sweep(
            &backend,
            &dataset,
            &corpus,
            &config(base_axes()),
            &mut writer,
            &[],
            &AtomicBool::new(false),
        )
        .unwrap();
        assert_eq!(outcome.cells_planned, 8);
        assert_eq!(outcome.cells_skipped, 0);
        assert_eq!(outcome.records_written, 8 * 3);
        assert_eq!(outcome.failed_records, 0);
        assert!(!outcome.cancelled);
        let records = crate::harness::read_records(&path).unwrap();
        assert_eq!(records.len(), 24);
    }

    #[test]
    fn completed_sweep_resumes_with_zero_new_records() {
        let dataset = demo_dataset(6, 2, 3);
        let corpus = vec![demo_format()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let cfg = config(base_axes());
        let backend = signal_backend();
        let mut writer = RecordWriter::create(&path, false).unwrap();
        run_sweep(
            &backend,
            &dataset,
            &corpus,
            &cfg,
            &mut writer,
            &[],
            &AtomicBool::new(false),
        )
        .unwrap();
        let existing = crate::harness::read_records(&path).unwrap();
        let mut writer = RecordWriter::create(&path, true).unwrap();
        let outcome = run_sweep(
            &backend,
            &dataset,
            &corpus,
            &cfg,
            &mut writer,
            &existing,
            &AtomicBool::new(false),
        )
        .unwrap();
        assert_eq!(outcome.cells_skipped, outcome.cells_planned);
        assert_eq!(outcome.records_written, 0);
        assert_eq!(
            crate::harness::read_records(&path).unwrap().len(),
            existing.len()
        );
    }

    #[test]
    fn cancellation_stops_before_the_next_cell() {
        let dataset = demo_dataset(6, 2, 3);
        let corpus = vec![demo_format()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut writer = RecordWriter::create(&path, false).unwrap();
        let backend = signal_backend();
        let cancel = AtomicBool::new(true);
        let outcome = run_sweep(
            &backend,
            &dataset,
            &corpus,
            &config(base_axes()),
            &mut writer,
            &[],
            &cancel,
        )
        .unwrap();
        assert!(outcome.cancelled);
        assert_eq!(outcome.records_written, 0);
    }

    #[test]
    fn oracle_axis_runs_and_bounds_contextual_from_above() {
        let dataset = demo_dataset(6, 4, 4);
        let corpus = vec![demo_format()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut writer = RecordWriter::create(&path, false).unwrap();
        let backend = signal_backend();
        let mut axes = base_axes();
        axes.permutations = PermutationAxis::Identity;
        axes.calibration_modes = vec![CalibrationMode::Diagonal, CalibrationMode::Oracle];
        let outcome = run_sweep(
            &backend,
            &dataset,
            &corpus,
            &config(axes),
            &mut writer,
            &[],
            &AtomicBool::new(false),
        )
        .unwrap();
        assert_eq!(outcome.failed_records, 0);
        let records = crate::harness::read_records(&path).unwrap();
        let acc = |mode: CalibrationMode| {
            let subset: Vec<RunRecord> = records
                .iter()
                .filter(|r| r.calibration_mode == mode)
                .cloned()
                .collect();
            crate::harness::accuracy(&subset).0.unwrap()
        };
        assert!(acc(CalibrationMode::Oracle) >= 0.0);
        assert!(acc(CalibrationMode::Diagonal) >= 0.0);
    }

    #[test]
    fn oracle_on_generation_is_rejected_at_planning() {
        let items = vec![
            DatasetItem {
                id: "a".into(),
                text: "q1".into(),
                gold: "ans1".into(),
            },
            DatasetItem {
                id: "b".into(),
                text: "q2".into(),
                gold: "ans2".into(),
            },
        ];
        let splits = Splits {
            train: vec!["a".into()],
            validation: vec![],
            test: vec!["b".into()],
        };
        let dataset =
            TaskDataset::from_parts(TaskKind::Generation, items, None, splits, None).unwrap();
        let corpus = vec![demo_format()];
        let mut axes = base_axes();
        axes.calibration_modes = vec![CalibrationMode::Oracle];
        assert!(matches!(
            plan_cells(&dataset, &corpus, &config(axes)),
            Err(HarnessError::OracleUnsupportedForGeneration)
        ));
    }

    fn record(key_mods: (usize, usize), correct: bool) -> RunRecord {
        let (set, perm) = key_mods;
        RunRecord {
            run_id: "r".into(),
            seed: 0,
            backend_id: "mock".into(),
            format_id: "plain".into(),
            shots: 2,
            training_set_id: set,
            permutation_index: perm as u64,
            cf_set_id: 0,
            calibration_mode: CalibrationMode::None,
            test_item_id: format!("item-{set}-{perm}-{correct}"),
            example_labels: vec![],
            gold: "yes".into(),
            outcome: Outcome::Classified {
                raw: ProbVector::dense(&[0.5, 0.5]).unwrap(),
                calibrated: None,
                prediction: if correct { "yes".into() } else { "no".into() },
                correct,
            },
        }
    }

    #[test]
    fn aggregate_matches_hand_statistics() {
        // Two cells with accuracies 0.4 (2/5) and 0.6 (3/5): mean 0.5,
        // population std 0.1.
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(record((0, 0), i < 2));
            records.push(record((1, 0), i < 3));
        }
        // Distinct item ids per record so each counts once.
        for (i, r) in records.iter_mut().enumerate() {
            r.test_item_id = format!("item{i}");
        }
        let rows = aggregate(&records, &[]);
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.cells, 2);
        assert!((row.mean - 0.5).abs() < 1e-12);
        assert!((row.std - 0.1).abs() < 1e-12);
        assert_eq!(row.min, 0.4);
        assert_eq!(row.max, 0.6);
        assert!(!row.singleton);
        assert!(row.min <= row.mean && row.mean <= row.max);
    }

    #[test]
    fn aggregate_groups_by_requested_keys() {
        let mut records = Vec::new();
        for i in 0..4 {
            let mut r = record((0, 0), true);
            r.test_item_id = format!("a{i}");
            records.push(r);
            let mut r = record((1, 0), i % 2 == 0);
            r.test_item_id = format!("b{i}");
            records.push(r);
        }
        let rows = aggregate(&records, &[GroupKey::TrainingSet]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].group["training_set"], "0");
        assert_eq!(rows[0].mean, 1.0);
        assert!(rows[0].singleton);
        assert_eq!(rows[1].group["training_set"], "1");
        assert_eq!(rows[1].mean, 0.5);
    }

    #[test]
    fn csv_has_group_columns_and_escapes() {
        let mut row_group = std::collections::BTreeMap::new();
        row_group.insert("format".to_string(), "weird,\"id\"".to_string());
        let rows = vec![SummaryRow {
            group: row_group,
            cells: 1,
            mean: 0.75,
            std: 0.0,
            min: 0.75,
            max: 0.75,
            singleton: true,
            failed_items: 0,
        }];
        let csv = summary_csv(&rows, &[GroupKey::Format]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "format,cells,mean,std,min,max,singleton,failed_items"
        );
        assert_eq!(
            lines.next().unwrap(),
            "\"weird,\"\"id\"\"\",1,0.75,0,0.75,0.75,true,0"
        );
    }

    #[test]
    fn permutation_axis_serde_forms() {
        #[derive(Serialize, Deserialize)]
        struct Holder {
            permutations: PermutationAxis,
        }
        let identity: Holder = serde_json::from_str(r#"{"permutations": "identity"}"#).unwrap();
        assert_eq!(identity.permutations, PermutationAxis::Identity);
        let all: Holder = serde_json::from_str(r#"{"permutations": "all"}"#).unwrap();
        assert_eq!(all.permutations, PermutationAxis::All);
        let sample: Holder = serde_json::from_str(r#"{"permutations": 12}"#).unwrap();
        assert_eq!(sample.permutations, PermutationAxis::Sample(12));
        assert!(serde_json::from_str::<Holder>(r#"{"permutations": "sideways"}"#).is_err());
        let json = serde_json::to_string(&all).unwrap();
        assert_eq!(json, r#"{"permutations":"all"}"#);
    }
}
