//! Record/replay backends.
//!
//! [`RecordingBackend`] wraps any live backend and appends every
//! request/response pair to a line-delimited fixture file.
//! [`FixtureBackend`] replays such a file byte-exactly, keyed by the
//! full request (prompt, seeded tokens, stop, max_tokens), so CI runs
//! against recorded traffic with no network access.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, LmBackend, LmQuery, NextTokenDistribution};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FixtureRequest {
    NextToken {
        prompt: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        generated: Vec<String>,
    },
    Complete {
        prompt: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        generated: Vec<String>,
        stop: String,
        max_tokens: usize,
    },
}

impl FixtureRequest {
    /// Canonical lookup key: serialized form of the request itself.
    fn key(&self) -> String {
        serde_json::to_string(self).expect("fixture request serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum FixtureResponse {
    NextToken(NextTokenDistribution),
    Completion(Completion),
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureRecord {
    request: FixtureRequest,
    response: FixtureResponse,
}

/// Wraps a live backend and captures every exchange to a fixture file.
/// Failures are not recorded; re-running a partially failed session
/// appends the missing exchanges.
pub struct RecordingBackend<B> {
    inner: B,
    sink: Mutex<BufWriter<File>>,
}

impl<B: LmBackend> RecordingBackend<B> {
    /// Appends to `path`, creating it if needed.
    pub fn create(inner: B, path: &Path) -> Result<Self, BackendError> {
        let file = File::options().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            sink: Mutex::new(BufWriter::new(file)),
        })
    }

    fn record(&self, record: &FixtureRecord) -> Result<(), BackendError> {
        let line = serde_json::to_string(record)?;
        let mut sink = self.sink.lock().expect("fixture sink poisoned");
        writeln!(sink, "{line}")?;
        sink.flush()?;
        Ok(())
    }
}

impl<B: LmBackend> LmBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn next_token(&self, query: &LmQuery) -> Result<NextTokenDistribution, BackendError> {
        let dist = self.inner.next_token(query)?;
        self.record(&FixtureRecord {
            request: FixtureRequest::NextToken {
                prompt: query.prompt.clone(),
                generated: query.generated.clone(),
            },
            response: FixtureResponse::NextToken(dist.clone()),
        })?;
        Ok(dist)
    }

    fn complete_greedy(
        &self,
        query: &LmQuery,
        stop: &str,
        max_tokens: usize,
    ) -> Result<Completion, BackendError> {
        let completion = self.inner.complete_greedy(query, stop, max_tokens)?;
        self.record(&FixtureRecord {
            request: FixtureRequest::Complete {
                prompt: query.prompt.clone(),
                generated: query.generated.clone(),
                stop: stop.to_string(),
                max_tokens,
            },
            response: FixtureResponse::Completion(completion.clone()),
        })?;
        Ok(completion)
    }
}

/// Replays a recorded fixture file. Requests not present in the file
/// fail with [`BackendError::FixtureMiss`]; duplicate recordings of the
/// same request keep the last response.
pub struct FixtureBackend {
    by_key: HashMap<String, FixtureResponse>,
    id: String,
}

impl FixtureBackend {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut by_key = HashMap::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(line)?;
            by_key.insert(record.request.key(), record.response);
        }
        Ok(Self {
            by_key,
            id: "fixture".into(),
        })
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

impl LmBackend for FixtureBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_token(&self, query: &LmQuery) -> Result<NextTokenDistribution, BackendError> {
        let key = FixtureRequest::NextToken {
            prompt: query.prompt.clone(),
            generated: query.generated.clone(),
        }
        .key();
        match self.by_key.get(&key) {
            Some(FixtureResponse::NextToken(dist)) => Ok(dist.clone()),
            _ => Err(BackendError::FixtureMiss(key)),
        }
    }

    fn complete_greedy(
        &self,
        query: &LmQuery,
        stop: &str,
        max_tokens: usize,
    ) -> Result<Completion, BackendError> {
        let key = FixtureRequest::Complete {
            prompt: query.prompt.clone(),
            generated: query.generated.clone(),
            stop: stop.to_string(),
            max_tokens,
        }
        .key();
        match self.by_key.get(&key) {
            Some(FixtureResponse::Completion(completion)) => Ok(completion.clone()),
            _ => Err(BackendError::FixtureMiss(key)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockLmConfig};
    use crate::backend::QueryContext;

    fn query() -> LmQuery {
        LmQuery::new("Review: fine\nSentiment:").with_context_raw(QueryContext {
            example_labels: vec!["Positive".into(), "Negative".into()],
            test_input: "fine".into(),
        })
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mock = MockBackend::new(MockLmConfig::uniform_base(
            ["Positive", "Negative"],
            1.0,
            0.5,
        ))
        .unwrap();
        let recorder = RecordingBackend::create(mock, &path).unwrap();
        let live_dist = recorder.next_token(&query()).unwrap();
        let live_completion = recorder.complete_greedy(&query(), "\n", 8).unwrap();
        drop(recorder);

        let replay = FixtureBackend::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.next_token(&query()).unwrap(), live_dist);
        assert_eq!(
            replay.complete_greedy(&query(), "\n", 8).unwrap(),
            live_completion
        );
    }

    #[test]
    fn missing_request_is_a_fixture_miss() {
        let replay = FixtureBackend::parse("").unwrap();
        assert!(matches!(
            replay.next_token(&query()),
            Err(BackendError::FixtureMiss(_))
        ));
    }

    #[test]
    fn replay_ignores_context_differences() {
        // The sidecar context never reaches a live wire, so the key is
        // the rendered prompt alone.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mock = MockBackend::new(MockLmConfig::uniform_base(
            ["Positive", "Negative"],
            0.0,
            1.0,
        ))
        .unwrap();
        let recorder = RecordingBackend::create(mock, &path).unwrap();
        recorder.next_token(&query()).unwrap();
        drop(recorder);

        let replay = FixtureBackend::load(&path).unwrap();
        let bare = LmQuery::new("Review: fine\nSentiment:");
        assert!(replay.next_token(&bare).is_ok());
    }
}
