//! Fixture-driven mock adapters.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Adapter, AdapterError, Candidate, ComponentRequest, Payload};
use crate::pipeline::SlotKind;

/// One fixture row: `{"match": "hello", "candidates": [["hallo", 1.0]]}`.
/// A row without `match` is the default answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub candidates: Vec<(String, f64)>,
}

impl FixtureEntry {
    pub fn exact(input: &str, candidates: &[(&str, f64)]) -> Self {
        Self {
            input: Some(input.to_string()),
            candidates: candidates.iter().map(|(p, s)| (p.to_string(), *s)).collect(),
        }
    }

    pub fn fallback(candidates: &[(&str, f64)]) -> Self {
        Self { input: None, candidates: candidates.iter().map(|(p, s)| (p.to_string(), *s)).collect() }
    }
}

/// Answers by exact lookup of the request payload in a fixture table.
/// TTS mocks return their fixture strings as audio asset references.
#[derive(Debug, Clone)]
pub struct MockAdapter {
    slot_kind: SlotKind,
    entries: Vec<FixtureEntry>,
    latency: Duration,
}

impl MockAdapter {
    pub fn new(slot_kind: SlotKind, entries: Vec<FixtureEntry>) -> Self {
        Self { slot_kind, entries, latency: Duration::ZERO }
    }

    /// Word table mock, e.g. a dictionary MT.
    pub fn dictionary(slot_kind: SlotKind, pairs: &[(&str, &str)]) -> Self {
        Self::new(slot_kind, pairs.iter().map(|(k, v)| FixtureEntry::exact(k, &[(v, 1.0)])).collect())
    }

    pub fn from_fixture_file(slot_kind: SlotKind, path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let entries: Vec<FixtureEntry> =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::new(slot_kind, entries))
    }

    /// Simulated processing time.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    fn lookup(&self, input: &str) -> Option<&FixtureEntry> {
        self.entries
            .iter()
            .find(|e| e.input.as_deref() == Some(input))
            .or_else(|| self.entries.iter().find(|e| e.input.is_none()))
    }
}

impl Adapter for MockAdapter {
    fn process(&self, request: &ComponentRequest, _timeout: Duration) -> Result<Vec<Candidate>, AdapterError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let entry = self
            .lookup(request.payload.raw())
            .ok_or_else(|| AdapterError::Failed(format!("no fixture entry for {:?}", request.payload.raw())))?;
        Ok(entry
            .candidates
            .iter()
            .map(|(p, score)| {
                let payload = match self.slot_kind {
                    SlotKind::Tts => Payload::Audio(p.as_str().into()),
                    _ => Payload::Text(p.clone()),
                };
                Candidate::new(payload, *score)
            })
            .collect())
    }
}
