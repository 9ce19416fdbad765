//! Shared fixtures for the integration suites: a balanced synthetic
//! sentiment task whose answer is encoded by a marker word, a biased
//! mock backend that reads that marker, a prediction log with known
//! per-position repeat rates, and the checked-in rendering cases.

// Each integration binary compiles this module and uses its own subset.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use ctxcal_core::backend::{MockBackend, MockLmConfig, SignalBoost};
use ctxcal_core::diagnostics::{LogRecord, PredictionLog};
use ctxcal_core::harness::{DatasetItem, Splits, TaskDataset, TaskKind};
use ctxcal_core::prompt::{LabelSpace, LabeledExample};
use serde::Deserialize;

pub const POSITIVE: &str = "Positive";
pub const NEGATIVE: &str = "Negative";

/// Marker words the mock keys on: inputs containing "uplifting" are
/// Positive, inputs containing "dreary" are Negative.
pub const POSITIVE_MARKER: &str = "uplifting";
pub const NEGATIVE_MARKER: &str = "dreary";

/// A balanced two-class task. Item text embeds the class marker, so a
/// backend that reads the marker can be made arbitrarily accurate.
/// Split sizes are per class: `train = 20` puts 20 Positive and 20
/// Negative items in the train split.
pub fn balanced_binary_task(train: usize, validation: usize, test: usize) -> TaskDataset {
    let space = LabelSpace::new(vec![POSITIVE.to_string(), NEGATIVE.to_string()]).unwrap();
    let mut items = Vec::new();
    let mut splits = Splits::default();
    let mut section = |prefix: &str, count: usize, ids: &mut Vec<String>| {
        for i in 0..count {
            for (tag, marker, label) in [
                ("p", POSITIVE_MARKER, POSITIVE),
                ("n", NEGATIVE_MARKER, NEGATIVE),
            ] {
                let id = format!("{prefix}-{tag}{i}");
                items.push(DatasetItem {
                    id: id.clone(),
                    text: format!("An {marker} little film, number {i}."),
                    gold: label.to_string(),
                });
                ids.push(id);
            }
        }
    };
    section("tr", train, &mut splits.train);
    section("va", validation, &mut splits.validation);
    section("te", test, &mut splits.test);
    TaskDataset::from_parts(TaskKind::Classification, items, Some(space), splits, None).unwrap()
}

/// A mock with uniform base weights over the two sentiment tokens, the
/// given example-answer bias strength and recency decay, and a marker
/// signal of the given weight. With `signal` at 0.5 and `alpha` at 1 the
/// prompt bias can flip predictions while calibration provably cannot
/// be flipped (the content-free input sees exactly the bias term).
pub fn biased_mock(alpha: f64, gamma: f64, signal: f64) -> MockBackend {
    let mut base_weights = BTreeMap::new();
    base_weights.insert(POSITIVE.to_string(), 1.0);
    base_weights.insert(NEGATIVE.to_string(), 1.0);
    let mut signal_words = BTreeMap::new();
    signal_words.insert(
        POSITIVE_MARKER.to_string(),
        SignalBoost {
            token: POSITIVE.to_string(),
            weight: signal,
        },
    );
    signal_words.insert(
        NEGATIVE_MARKER.to_string(),
        SignalBoost {
            token: NEGATIVE.to_string(),
            weight: signal,
        },
    );
    let config = MockLmConfig {
        base_weights,
        majority_strength: alpha,
        recency_decay: gamma,
        signal_words,
        completions: BTreeMap::new(),
        completion_strength: 1.0,
        noise_scale: 0.0,
        noise_seed: 0,
    };
    MockBackend::new(config).unwrap()
}

/// One hand-transcribed rendering case: the format to render through,
/// the examples and test input to fill in, and (on disk next to the
/// case list) the expected output bytes.
#[derive(Debug, Deserialize)]
pub struct GoldenCase {
    pub case_id: String,
    pub format_id: String,
    pub examples: Vec<LabeledExample>,
    pub test_input: String,
}

impl GoldenCase {
    /// The expected rendering, stored byte-for-byte with no trailing
    /// newline added.
    pub fn expected(&self) -> String {
        let path = golden_dir()
            .join("renders")
            .join(format!("{}.txt", self.case_id));
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
    }
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/golden")
}

/// All checked-in rendering cases.
pub fn golden_cases() -> Vec<GoldenCase> {
    let path = golden_dir().join("cases.jsonl");
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).expect("well-formed golden case"))
        .collect()
}

/// A 1,000-record four-position log with exact per-position repeat
/// rates. Each record has four distinct candidate answers; records in
/// `predicted_upto` index ranges predict the answer at that position,
/// records in `gold_upto` ranges have gold equal to that position's
/// answer, and everything else matches no position.
///
/// Prediction rates by position: 20.7 / 19.8 / 29.9 / 26.8%.
/// Gold rates by position:       12.2 / 11.5 / 15.6 / 10.7%.
pub fn recency_fixture_log() -> PredictionLog {
    const N: usize = 1000;
    // Cumulative record-index boundaries per position.
    const PRED_UPTO: [usize; 4] = [207, 405, 704, 972];
    const GOLD_UPTO: [usize; 4] = [122, 237, 393, 500];
    let position_of = |upto: &[usize; 4], i: usize| upto.iter().position(|&b| i < b);
    let mut records = Vec::with_capacity(N);
    for i in 0..N {
        let answers: Vec<String> = (1..=4).map(|p| format!("answer-{i}-{p}")).collect();
        let predicted = match position_of(&PRED_UPTO, i) {
            Some(p) => answers[p].clone(),
            None => "unrelated prediction".to_string(),
        };
        let gold = match position_of(&GOLD_UPTO, i) {
            Some(p) => answers[p].clone(),
            None => "unrelated gold".to_string(),
        };
        records.push(LogRecord {
            ordered_labels: answers,
            predicted,
            gold,
            raw: None,
        });
    }
    PredictionLog {
        records,
        label_space: None,
    }
}
