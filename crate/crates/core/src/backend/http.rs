//! HTTP client for completions-style servers.
//!
//! Speaks the de-facto completions wire shape without binding to any
//! vendor: a single POST accepting
//! `{prompt, max_tokens, logprobs, echo: false, temperature: 0}` and
//! returning `{choices: [{text, logprobs: {tokens, top_logprobs}}]}`.
//! Base URL, path, auth header, and key come from configuration; the
//! key itself is read from an environment variable by the caller, never
//! from a file.
//!
//! Next-token probabilities are the exponentials of the returned top
//! logprobs; the mass outside the top-k is kept as remainder. Unknown
//! response fields are ignored, never interpreted.
//!
//! Failed requests retry with exponential backoff on timeouts,
//! connection errors, 429, and 5xx; other statuses fail immediately. A
//! global minimum-interval rate limit is enforced across threads.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, LmBackend, LmQuery, NextTokenDistribution};

fn default_path() -> String {
    "/v1/completions".into()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_top_k() -> usize {
    100
}

fn default_max_retries() -> usize {
    3
}

fn default_initial_backoff_ms() -> u64 {
    250
}

fn default_max_parallel() -> usize {
    4
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_prefix() -> String {
    "Bearer ".into()
}

/// Configuration for [`HttpBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Scheme + host (+ optional port), e.g. "http://127.0.0.1:8080".
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    /// Model name forwarded in the request body when set; some servers
    /// require it, the wire shape does not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Top-k size requested through the body's `logprobs` field.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    /// Minimum spacing between any two requests, across threads.
    /// 0 disables rate limiting.
    #[serde(default)]
    pub min_request_interval_ms: u64,
    /// Parallelism bound advertised to the harness; the client itself is
    /// safe at any concurrency.
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    /// Resolved API key (from the environment); `None` sends no auth
    /// header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            path: default_path(),
            model: None,
            timeout_ms: default_timeout_ms(),
            top_k: default_top_k(),
            max_retries: default_max_retries(),
            initial_backoff_ms: default_initial_backoff_ms(),
            min_request_interval_ms: 0,
            max_parallel: default_max_parallel(),
            auth_header: default_auth_header(),
            auth_prefix: default_auth_prefix(),
            api_key: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct CompletionsRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: String,
    max_tokens: usize,
    logprobs: usize,
    echo: bool,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct CompletionsResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    logprobs: Option<LogProbs>,
}

#[derive(Debug, Deserialize)]
struct LogProbs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    top_logprobs: Vec<BTreeMap<String, f64>>,
}

/// Blocking completions client with retry, backoff, and a global rate
/// limit. Cheap to share across threads.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    last_request: Mutex<Option<Instant>>,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self {
            config,
            client,
            last_request: Mutex::new(None),
            id: "http".into(),
        })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!(
            "{}{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.path
        )
    }

    /// Sleeps until the configured minimum interval since the previous
    /// request has elapsed, then stamps this request's slot.
    fn rate_limit_gate(&self) {
        if self.config.min_request_interval_ms == 0 {
            return;
        }
        let interval = Duration::from_millis(self.config.min_request_interval_ms);
        let mut last = self.last_request.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < interval {
                std::thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn send(&self, body: &CompletionsRequest<'_>) -> Result<CompletionsResponse, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self
                    .config
                    .initial_backoff_ms
                    .saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            self.rate_limit_gate();
            let mut request = self.client.post(self.endpoint()).json(body);
            if let Some(key) = &self.config.api_key {
                request = request.header(
                    self.config.auth_header.as_str(),
                    format!("{}{}", self.config.auth_prefix, key),
                );
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json::<CompletionsResponse>()
                            .map_err(|e| BackendError::InvalidResponse(e.to_string()));
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    let body_text = response.text().unwrap_or_default();
                    if !retryable {
                        return Err(BackendError::Http {
                            status: status.as_u16(),
                            body: body_text,
                        });
                    }
                    last_error = format!("HTTP {status}: {body_text}");
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts,
            last: last_error,
        })
    }

    /// The prompt text actually sent: rendered prompt plus any seeded
    /// tokens, concatenated verbatim (API tokens carry their own
    /// spacing).
    fn wire_prompt(query: &LmQuery) -> String {
        let mut prompt = query.prompt.clone();
        for token in &query.generated {
            prompt.push_str(token);
        }
        prompt
    }
}

impl LmBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_token(&self, query: &LmQuery) -> Result<NextTokenDistribution, BackendError> {
        let body = CompletionsRequest {
            model: self.config.model.as_deref(),
            prompt: Self::wire_prompt(query),
            max_tokens: 1,
            logprobs: self.config.top_k,
            echo: false,
            temperature: 0.0,
        };
        let response = self.send(&body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("empty choices".into()))?;
        let logprobs = choice
            .logprobs
            .ok_or_else(|| BackendError::InvalidResponse("missing logprobs".into()))?;
        let first = logprobs
            .top_logprobs
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("empty top_logprobs".into()))?;
        let top: Vec<(String, f64)> = first
            .into_iter()
            .map(|(token, lp)| (token, lp.exp()))
            .collect();
        let sum: f64 = top.iter().map(|(_, p)| p).sum();
        if sum > 1.0 + 1e-6 {
            return Err(BackendError::InvalidResponse(format!(
                "top logprobs exponentiate to {sum} > 1"
            )));
        }
        NextTokenDistribution::new(top, (1.0 - sum).max(0.0))
    }

    fn complete_greedy(
        &self,
        query: &LmQuery,
        stop: &str,
        max_tokens: usize,
    ) -> Result<Completion, BackendError> {
        let body = CompletionsRequest {
            model: self.config.model.as_deref(),
            prompt: Self::wire_prompt(query),
            max_tokens,
            logprobs: self.config.top_k,
            echo: false,
            temperature: 0.0,
        };
        let response = self.send(&body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("empty choices".into()))?;
        let seeded: String = query.generated.concat();
        let (completed, hit_max_tokens) = match choice.text.find(stop) {
            Some(at) => (&choice.text[..at], false),
            None => {
                let emitted = choice
                    .logprobs
                    .map(|lp| lp.tokens.len())
                    .unwrap_or(max_tokens);
                (choice.text.as_str(), emitted >= max_tokens)
            }
        };
        Ok(Completion {
            text: format!("{seeded}{completed}"),
            hit_max_tokens,
        })
    }
}
