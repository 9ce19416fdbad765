//! Deterministic mock LM with tunable prompt biases.
//!
//! The mock scores candidate first tokens with a closed-form mixture
//!
//! ```text
//! score(t) = base_weights(t)                                   (common-token bias)
//!          + α · Σ_i γ^(i−1) · [t == first word of answer_i]   (majority + recency bias)
//!          + signal terms from the test input                  (task content)
//! ```
//!
//! where `i` indexes training positions 1-indexed from the END of the
//! prompt, and normalizes scores to a full distribution (no remainder
//! mass). With `γ = 1` the bias term counts answer frequency only
//! (majority label bias); with `γ < 1` later examples weigh more
//! (recency bias); `base_weights` favor tokens regardless of the prompt
//! (common-token bias). The bias structure is read from the query's
//! [`QueryContext`] sidecar, never by re-parsing rendered prompt text.
//!
//! Signal terms make the mock solvable: if the test input contains a
//! configured signal word, that word's target token gains weight. A
//! content-free input carries no signal words, so the bias terms are
//! exactly what calibration measures and removes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, LmBackend, LmQuery, NextTokenDistribution, QueryContext};
use crate::seeding;

/// Extra weight granted to `token` when the test input contains the
/// signal word this boost is keyed by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalBoost {
    pub token: String,
    pub weight: f64,
}

/// Configuration of the mock's closed-form scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockLmConfig {
    /// Per-token positive weights; the distribution support is these
    /// tokens plus any token introduced by bias or signal terms.
    pub base_weights: BTreeMap<String, f64>,
    /// α ≥ 0: strength of the example-answer bias term.
    pub majority_strength: f64,
    /// γ ∈ (0, 1]: per-position decay walking backward from the prompt
    /// end. 1 = pure frequency; smaller = recency-weighted.
    pub recency_decay: f64,
    /// Word (substring of the test input) → token boost.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub signal_words: BTreeMap<String, SignalBoost>,
    /// Canned greedy answer per test input (generation tasks).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub completions: BTreeMap<String, String>,
    /// Weight granted to the canned answer's first word.
    #[serde(default = "default_completion_strength")]
    pub completion_strength: f64,
    /// Deterministic score jitter amplitude (0 disables; scores then
    /// follow the closed form exactly).
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_completion_strength() -> f64 {
    1.0
}

impl MockLmConfig {
    /// Uniform base weights over the given tokens, no signal, no noise.
    pub fn uniform_base(
        tokens: impl IntoIterator<Item = impl Into<String>>,
        majority_strength: f64,
        recency_decay: f64,
    ) -> Self {
        Self {
            base_weights: tokens.into_iter().map(|t| (t.into(), 1.0)).collect(),
            majority_strength,
            recency_decay,
            signal_words: BTreeMap::new(),
            completions: BTreeMap::new(),
            completion_strength: default_completion_strength(),
            noise_scale: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.base_weights.is_empty() {
            return Err(BackendError::InvalidDistribution(
                "mock base_weights must be non-empty".into(),
            ));
        }
        for (token, w) in &self.base_weights {
            if !w.is_finite() || *w <= 0.0 {
                return Err(BackendError::InvalidDistribution(format!(
                    "mock base weight {w} for token {token:?}"
                )));
            }
        }
        if !self.majority_strength.is_finite() || self.majority_strength < 0.0 {
            return Err(BackendError::InvalidDistribution(format!(
                "mock majority_strength {} must be >= 0",
                self.majority_strength
            )));
        }
        if !(self.recency_decay > 0.0 && self.recency_decay <= 1.0) {
            return Err(BackendError::InvalidDistribution(format!(
                "mock recency_decay {} must be in (0, 1]",
                self.recency_decay
            )));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(BackendError::InvalidDistribution(format!(
                "mock noise_scale {} must be >= 0",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

fn first_word(text: &str) -> Option<&str> {
    text.split_whitespace().next()
}

/// First-token distribution of the mock for a prompt context: the
/// closed-form bias mixture over base tokens, example-answer first
/// words, and triggered signal tokens.
pub fn mock_next_token(config: &MockLmConfig, context: &QueryContext) -> NextTokenDistribution {
    let mut scores: BTreeMap<String, f64> = config.base_weights.clone();
    // Bias term: positions 1-indexed from the prompt END.
    let n = context.example_labels.len();
    for (pos_from_end, label) in context.example_labels.iter().rev().enumerate() {
        if let Some(word) = first_word(label) {
            let weight = config.majority_strength * config.recency_decay.powi(pos_from_end as i32);
            *scores.entry(word.to_string()).or_insert(0.0) += weight;
        }
        debug_assert!(pos_from_end < n);
    }
    // Signal terms from the test input.
    for (word, boost) in &config.signal_words {
        if context.test_input.contains(word.as_str()) {
            *scores.entry(boost.token.clone()).or_insert(0.0) += boost.weight;
        }
    }
    // Canned answer pull (generation tasks).
    if let Some(answer) = config.completions.get(&context.test_input) {
        if let Some(word) = first_word(answer) {
            *scores.entry(word.to_string()).or_insert(0.0) += config.completion_strength;
        }
    }
    if config.noise_scale > 0.0 {
        for (token, score) in scores.iter_mut() {
            *score = (*score
                + config.noise_scale
                    * seeding::unit_noise(config.noise_seed, &[token, &context.test_input]))
            .max(0.0);
        }
    }
    let z: f64 = scores.values().sum();
    let top: Vec<(String, f64)> = scores.into_iter().map(|(t, s)| (t, s / z)).collect();
    NextTokenDistribution::new(top, 0.0).expect("normalized scores form a distribution")
}

/// The deterministic mock backend.
///
/// First-token queries score through [`mock_next_token`]. Continuation
/// queries (non-empty `generated`) walk word-by-word through the canned
/// completion for the test input when the generated prefix matches it,
/// or through a training answer whose first word matches, and emit the
/// stop word `"\n"` otherwise. Tokens are whitespace words; completions
/// reassemble them with single spaces.
pub struct MockBackend {
    config: MockLmConfig,
    id: String,
}

impl MockBackend {
    pub fn new(config: MockLmConfig) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Self {
            config,
            id: "mock".into(),
        })
    }

    pub fn with_id(config: MockLmConfig, id: impl Into<String>) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Self {
            config,
            id: id.into(),
        })
    }

    pub fn config(&self) -> &MockLmConfig {
        &self.config
    }

    fn empty_context() -> QueryContext {
        QueryContext {
            example_labels: Vec::new(),
            test_input: String::new(),
        }
    }

    /// Next word continuing `generated`, or "\n" when no continuation
    /// applies.
    fn continuation(&self, context: &QueryContext, generated: &[String]) -> String {
        let candidates = self
            .config
            .completions
            .get(&context.test_input)
            .into_iter()
            .map(String::as_str)
            .chain(context.example_labels.iter().map(String::as_str));
        for answer in candidates {
            let words: Vec<&str> = answer.split_whitespace().collect();
            let matches_prefix =
                generated.len() <= words.len() && generated.iter().zip(&words).all(|(g, w)| g == w);
            if matches_prefix {
                return match words.get(generated.len()) {
                    Some(next) => next.to_string(),
                    None => "\n".to_string(),
                };
            }
        }
        "\n".to_string()
    }
}

impl LmBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_token(&self, query: &LmQuery) -> Result<NextTokenDistribution, BackendError> {
        let empty = Self::empty_context();
        let context = query.context.as_ref().unwrap_or(&empty);
        if query.generated.is_empty() {
            Ok(mock_next_token(&self.config, context))
        } else {
            let next = self.continuation(context, &query.generated);
            Ok(NextTokenDistribution::new(vec![(next, 1.0)], 0.0).expect("single token"))
        }
    }

    fn complete_greedy(
        &self,
        query: &LmQuery,
        stop: &str,
        max_tokens: usize,
    ) -> Result<Completion, BackendError> {
        let mut tokens = query.generated.clone();
        let mut hit_max_tokens = true;
        while tokens.len() < max_tokens {
            let dist = self.next_token(&query.clone().with_generated(tokens.clone()))?;
            let next = dist
                .argmax()
                .ok_or_else(|| BackendError::InvalidDistribution("empty mock support".into()))?
                .to_string();
            if next == stop {
                hit_max_tokens = false;
                break;
            }
            tokens.push(next);
        }
        Ok(Completion {
            text: tokens.join(" "),
            hit_max_tokens,
        })
    }
}
