//! Uniform interface to next-token probability sources.
//!
//! Three backends implement [`LmBackend`]: an HTTP client for
//! completions-style servers ([`http::HttpBackend`]), a deterministic
//! biased mock for offline tests ([`mock::MockBackend`]), and a
//! record/replay fixture backend ([`fixture`]). Callers talk to all of
//! them through two operations: the next-token distribution at the end
//! of a prompt, and greedy completion until a stop string.
//!
//! Queries carry an optional [`QueryContext`] sidecar with the prompt's
//! structured content (ordered example labels, test input). The mock
//! reads biases from the sidecar instead of re-parsing rendered text, so
//! it stays independent of format quirks.

pub mod fixture;
pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{LabelSpace, PromptSpec};
use crate::ClassId;

pub use fixture::{FixtureBackend, RecordingBackend};
pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{mock_next_token, MockBackend, MockLmConfig, SignalBoost};

/// Tolerance on total probability mass of a [`NextTokenDistribution`].
pub const DIST_MASS_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("stop string must be non-empty")]
    EmptyStop,
    /// The label's scoring token fell outside the returned top-k. The
    /// caller may retry with a larger `top_k` or treat the label as
    /// epsilon-mass; the harness quarantines the item.
    #[error("label token {token:?} not in returned top-{top_k} (remainder mass {remainder_mass}); raise top_k")]
    TokenNotInTopK {
        token: String,
        top_k: usize,
        remainder_mass: f64,
    },
    #[error("invalid next-token distribution: {0}")]
    InvalidDistribution(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("malformed completions response: {0}")]
    InvalidResponse(String),
    #[error("API key not configured: set the {0} environment variable")]
    MissingApiKey(String),
    #[error("no fixture entry for request: {0}")]
    FixtureMiss(String),
    #[error("fixture file: {0}")]
    FixtureIo(#[from] std::io::Error),
    #[error("fixture record: {0}")]
    FixtureFormat(#[from] serde_json::Error),
}

// ─── Query types ─────────────────────────────────────────────────────────────

/// Structured prompt content passed alongside the rendered text.
///
/// `example_labels` are the training answers in prompt order;
/// `test_input` is the raw test text. Backends that model prompt biases
/// (the mock) consume this; text-only backends ignore it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryContext {
    pub example_labels: Vec<String>,
    pub test_input: String,
}

impl QueryContext {
    pub fn from_spec(spec: &PromptSpec) -> Self {
        Self {
            example_labels: spec.ordered_labels(),
            test_input: spec.test_input.clone(),
        }
    }
}

/// One backend request: the rendered prompt, optional structured
/// context, and any tokens already fixed for the current completion
/// (used to continue generation after calibration re-ranks the first
/// token).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmQuery {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<QueryContext>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generated: Vec<String>,
}

impl LmQuery {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            context: None,
            generated: Vec::new(),
        }
    }

    pub fn with_context(mut self, spec: &PromptSpec) -> Self {
        self.context = Some(QueryContext::from_spec(spec));
        self
    }

    pub fn with_context_raw(mut self, context: QueryContext) -> Self {
        self.context = Some(context);
        self
    }

    pub fn with_generated(mut self, generated: Vec<String>) -> Self {
        self.generated = generated;
        self
    }
}

// ─── Distribution and completion results ────────────────────────────────────

/// Truncated next-token distribution: listed tokens with probabilities,
/// plus the mass of everything outside the list. Entries are sorted by
/// descending probability (ties by token) at construction, so argmax and
/// serialized order are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTokenDistribution {
    top: Vec<(String, f64)>,
    remainder_mass: f64,
}

impl NextTokenDistribution {
    pub fn new(mut top: Vec<(String, f64)>, remainder_mass: f64) -> Result<Self, BackendError> {
        let mut seen = std::collections::BTreeSet::new();
        for (token, p) in &top {
            if !p.is_finite() || *p < 0.0 {
                return Err(BackendError::InvalidDistribution(format!(
                    "probability {p} for token {token:?}"
                )));
            }
            if !seen.insert(token.as_str()) {
                return Err(BackendError::InvalidDistribution(format!(
                    "duplicate token {token:?}"
                )));
            }
        }
        if !remainder_mass.is_finite() || remainder_mass < 0.0 {
            return Err(BackendError::InvalidDistribution(format!(
                "remainder mass {remainder_mass}"
            )));
        }
        let sum: f64 = top.iter().map(|(_, p)| p).sum::<f64>() + remainder_mass;
        if (sum - 1.0).abs() > DIST_MASS_EPS {
            return Err(BackendError::InvalidDistribution(format!(
                "mass sums to {sum}, expected 1"
            )));
        }
        top.sort_by(|(ta, pa), (tb, pb)| {
            pb.partial_cmp(pa)
                .expect("finite probs")
                .then_with(|| ta.cmp(tb))
        });
        Ok(Self {
            top,
            remainder_mass,
        })
    }

    pub fn top(&self) -> &[(String, f64)] {
        &self.top
    }

    pub fn remainder_mass(&self) -> f64 {
        self.remainder_mass
    }

    /// Probability of a listed token; `None` when the token fell outside
    /// the truncation.
    pub fn prob(&self, token: &str) -> Option<f64> {
        self.top.iter().find(|(t, _)| t == token).map(|(_, p)| *p)
    }

    /// Highest-probability token (ties broken by token order). `None`
    /// only for an empty list.
    pub fn argmax(&self) -> Option<&str> {
        self.top.first().map(|(t, _)| t.as_str())
    }
}

/// Result of a greedy completion. `text` is the full completion in the
/// backend's own token assembly, including any tokens pre-seeded through
/// [`LmQuery::generated`], excluding the stop string. `hit_max_tokens`
/// flags a completion cut off by the token budget before the stop
/// appeared (the partial text is still returned).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub hit_max_tokens: bool,
}

// ─── Backend trait and free operations ───────────────────────────────────────

/// A next-token probability source.
///
/// Implementations must be safe for concurrent request issuance; the
/// harness bounds parallelism.
pub trait LmBackend: Send + Sync {
    /// Stable identifier recorded with every run.
    fn id(&self) -> &str;

    /// Distribution over the single next token at the end of
    /// `prompt` + `generated`.
    fn next_token(&self, query: &LmQuery) -> Result<NextTokenDistribution, BackendError>;

    /// Greedy (argmax) completion until `stop` or `max_tokens`.
    fn complete_greedy(
        &self,
        query: &LmQuery,
        stop: &str,
        max_tokens: usize,
    ) -> Result<Completion, BackendError>;
}

/// Raw next-token probability of each label's scoring token, in class
/// order. Not renormalized; the calibration layer does that.
///
/// A label token missing from a truncated distribution is an error when
/// remainder mass could hide it, and zero when the distribution is
/// complete.
pub fn label_probs(
    backend: &dyn LmBackend,
    query: &LmQuery,
    labels: &LabelSpace,
) -> Result<Vec<(ClassId, f64)>, BackendError> {
    if query.prompt.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    let dist = backend.next_token(query)?;
    let top_k = dist.top().len();
    labels
        .classes()
        .map(|class| {
            let token = labels.first_token(class);
            match dist.prob(token) {
                Some(p) => Ok((class, p)),
                None if dist.remainder_mass() > 0.0 => Err(BackendError::TokenNotInTopK {
                    token: token.to_string(),
                    top_k,
                    remainder_mass: dist.remainder_mass(),
                }),
                None => Ok((class, 0.0)),
            }
        })
        .collect()
}

/// Greedy completion until `stop` (default "\n") or `max_tokens`.
pub fn greedy_complete(
    backend: &dyn LmBackend,
    query: &LmQuery,
    stop: &str,
    max_tokens: usize,
) -> Result<Completion, BackendError> {
    if stop.is_empty() {
        return Err(BackendError::EmptyStop);
    }
    if query.prompt.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    backend.complete_greedy(query, stop, max_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_sorts_and_validates() {
        let dist = NextTokenDistribution::new(
            vec![("b".into(), 0.2), ("a".into(), 0.5), ("c".into(), 0.2)],
            0.1,
        )
        .unwrap();
        assert_eq!(dist.argmax(), Some("a"));
        // Equal probabilities fall back to token order.
        assert_eq!(dist.top()[1].0, "b");
        assert_eq!(dist.prob("c"), Some(0.2));
        assert_eq!(dist.prob("zzz"), None);
    }

    #[test]
    fn distribution_rejects_bad_mass() {
        assert!(NextTokenDistribution::new(vec![("a".into(), 0.5)], 0.0).is_err());
        assert!(NextTokenDistribution::new(vec![("a".into(), -0.1)], 1.1).is_err());
        assert!(
            NextTokenDistribution::new(vec![("a".into(), 0.5), ("a".into(), 0.5)], 0.0).is_err()
        );
    }
}
