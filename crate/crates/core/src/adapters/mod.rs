//! Uniform access to ASR, MT, DM and TTS components.
//!
//! Every component sits behind [`Adapter`]. The [`AdapterRegistry`] maps
//! adapter ids to implementations, checks requests, enforces timeouts and
//! single-flight registration, and normalises results. Mocks answer from
//! fixture tables; remote adapters speak one HTTP+JSON contract
//! (`POST /process`).

mod degrade;
mod mock;
mod prepared;
mod registry;
mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use degrade::{degrade_delay, degrade_text, degrade_text_with, DegradationProfile, DegradeOutcome};
pub use mock::{FixtureEntry, MockAdapter};
pub use prepared::{lookup_prepared, PreparedOutput};
pub use registry::{AdapterRegistry, RegistryEntry, RegistryError};
pub use remote::RemoteAdapter;

use crate::ids::{AssetRef, LanguageTag};
use crate::pipeline::SlotKind;

/// Component input or output. Audio travels by asset reference only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Text(String),
    Audio(AssetRef),
}

impl Payload {
    pub fn text(s: impl Into<String>) -> Self {
        Payload::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(t) => Some(t),
            Payload::Audio(_) => None,
        }
    }

    /// The raw string carried, whatever the kind.
    pub fn raw(&self) -> &str {
        match self {
            Payload::Text(t) => t,
            Payload::Audio(a) => a.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub payload: Payload,
    pub score: f64,
}

impl Candidate {
    pub fn new(payload: Payload, score: f64) -> Self {
        Self { payload, score }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRequest {
    pub slot_kind: SlotKind,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_language: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_language: Option<LanguageTag>,
    #[serde(default)]
    pub want_nbest: bool,
    #[serde(default = "one")]
    pub nbest_size: u32,
}

fn one() -> u32 {
    1
}

impl ComponentRequest {
    pub fn new(slot_kind: SlotKind, payload: Payload) -> Self {
        Self { slot_kind, payload, source_language: None, target_language: None, want_nbest: false, nbest_size: 1 }
    }

    pub fn languages(mut self, source: Option<LanguageTag>, target: Option<LanguageTag>) -> Self {
        self.source_language = source;
        self.target_language = target;
        self
    }

    pub fn nbest(mut self, size: u32) -> Self {
        self.want_nbest = true;
        self.nbest_size = size;
        self
    }

    /// Check the payload kind and language hints against the slot.
    pub fn check(&self) -> Result<(), AdapterError> {
        let bad = |m: &str| Err(AdapterError::BadPayload(m.to_string()));
        if self.nbest_size == 0 {
            return bad("nbest_size must be positive");
        }
        match (self.slot_kind, &self.payload) {
            (SlotKind::TextIn | SlotKind::TextOut, _) => bad("plain I/O slots have no component"),
            (SlotKind::Asr, Payload::Text(_)) => bad("ASR expects an audio payload"),
            (SlotKind::Asr, Payload::Audio(_)) => Ok(()),
            (kind, Payload::Audio(_)) => bad(&format!("{kind} expects a text payload")),
            (kind, Payload::Text(_)) if kind.is_mt() => match (&self.source_language, &self.target_language) {
                (Some(s), Some(t)) if !s.same_language(t) => Ok(()),
                (Some(_), Some(_)) => bad("MT source and target language must differ"),
                _ => bad("MT request needs source and target language"),
            },
            (_, Payload::Text(_)) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub candidates: Vec<Candidate>,
    pub latency_ms: u64,
    pub adapter_id: String,
}

impl ComponentResult {
    pub fn best(&self) -> &Candidate {
        &self.candidates[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("adapter {adapter} timed out after {timeout_ms} ms")]
    Timeout { adapter: String, timeout_ms: u64 },
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("adapter returned an invalid result: {0}")]
    BadResult(String),
    #[error("adapter failed: {0}")]
    Failed(String),
}

/// A language-technology component.
///
/// Implementations may block; the registry runs them off the caller's
/// thread and stops waiting after `timeout`.
pub trait Adapter: Send + Sync {
    fn process(&self, request: &ComponentRequest, timeout: Duration) -> Result<Vec<Candidate>, AdapterError>;
}
