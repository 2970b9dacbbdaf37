//! Adapter registry: id → implementation, timeouts, single-flight.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Adapter, AdapterError, ComponentRequest, ComponentResult, MockAdapter, RemoteAdapter};
use crate::pipeline::SlotKind;

/// One row of `adapters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: String,
    pub slot_kind: SlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_fixture_path: Option<PathBuf>,
    #[serde(default)]
    pub single_flight: bool,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed registry: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("adapter {0}: exactly one of url and mock_fixture_path is required")]
    Backend(String),
    #[error("adapter {id}: {message}")]
    Fixture { id: String, message: String },
    #[error("duplicate adapter id {0}")]
    Duplicate(String),
}

struct Registration {
    slot_kind: SlotKind,
    adapter: Arc<dyn Adapter>,
    // Held for the whole call when the adapter is single-flight.
    gate: Option<Arc<Mutex<()>>>,
}

#[derive(Default, Clone)]
pub struct AdapterRegistry {
    entries: HashMap<String, Arc<Registration>>,
}

impl std::fmt::Debug for AdapterRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        f.debug_struct("AdapterRegistry").field("adapters", &ids).finish()
    }
}

impl AdapterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        id: &str,
        slot_kind: SlotKind,
        adapter: impl Adapter + 'static,
        single_flight: bool,
    ) -> &mut Self {
        let gate = single_flight.then(|| Arc::new(Mutex::new(())));
        self.entries
            .insert(id.to_string(), Arc::new(Registration { slot_kind, adapter: Arc::new(adapter), gate }));
        self
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Load `adapters.json`. Fixture paths are relative to the file.
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| RegistryError::Io { path: path.to_path_buf(), source })?;
        let entries: Vec<RegistryEntry> = serde_json::from_str(&text)?;
        Self::from_entries(entries, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_entries(entries: Vec<RegistryEntry>, base: &Path) -> Result<Self, RegistryError> {
        let mut reg = Self::new();
        for e in entries {
            if reg.contains(&e.id) {
                return Err(RegistryError::Duplicate(e.id));
            }
            match (&e.url, &e.mock_fixture_path) {
                (Some(url), None) => {
                    reg.register(&e.id, e.slot_kind, RemoteAdapter::new(url), e.single_flight);
                }
                (None, Some(fixture)) => {
                    let mock = MockAdapter::from_fixture_file(e.slot_kind, &base.join(fixture))
                        .map_err(|message| RegistryError::Fixture { id: e.id.clone(), message })?;
                    reg.register(&e.id, e.slot_kind, mock, e.single_flight);
                }
                _ => return Err(RegistryError::Backend(e.id)),
            }
        }
        Ok(reg)
    }

    /// Run the adapter off the calling thread and wait at most `timeout_ms`.
    pub fn invoke(
        &self,
        adapter_id: &str,
        request: &ComponentRequest,
        timeout_ms: u64,
    ) -> Result<ComponentResult, AdapterError> {
        let reg = self
            .entries
            .get(adapter_id)
            .ok_or_else(|| AdapterError::AdapterUnavailable(format!("{adapter_id} is not registered")))?;
        if reg.slot_kind != request.slot_kind {
            return Err(AdapterError::AdapterUnavailable(format!(
                "{adapter_id} serves {}, not {}",
                reg.slot_kind, request.slot_kind
            )));
        }
        request.check()?;

        let timeout = Duration::from_millis(timeout_ms);
        let started = Instant::now();
        let (tx, rx) = mpsc::channel();
        let worker_reg = Arc::clone(reg);
        let worker_req = request.clone();
        std::thread::Builder::new()
            .name(format!("adapter-{adapter_id}"))
            .spawn(move || {
                let _guard = worker_reg.gate.as_ref().map(|g| g.lock().unwrap_or_else(|p| p.into_inner()));
                let remaining = timeout.saturating_sub(started.elapsed());
                let _ = tx.send(worker_reg.adapter.process(&worker_req, remaining));
            })
            .map_err(|e| AdapterError::Failed(format!("cannot spawn worker: {e}")))?;

        let candidates = match rx.recv_timeout(timeout) {
            Ok(result) => result?,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(AdapterError::Timeout { adapter: adapter_id.to_string(), timeout_ms })
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(AdapterError::Failed(format!("{adapter_id} worker panicked")))
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        normalize(adapter_id, request, candidates, latency_ms)
    }
}

fn normalize(
    adapter_id: &str,
    request: &ComponentRequest,
    mut candidates: Vec<super::Candidate>,
    latency_ms: u64,
) -> Result<ComponentResult, AdapterError> {
    if candidates.is_empty() {
        return Err(AdapterError::BadResult("no candidates".into()));
    }
    if candidates.iter().any(|c| !(0.0..=1.0).contains(&c.score)) {
        return Err(AdapterError::BadResult("score outside [0, 1]".into()));
    }
    if candidates.windows(2).any(|w| w[1].score > w[0].score) {
        return Err(AdapterError::BadResult("scores must be non-increasing".into()));
    }
    let keep = if request.want_nbest { request.nbest_size as usize } else { 1 };
    candidates.truncate(keep);
    Ok(ComponentResult { candidates, latency_ms, adapter_id: adapter_id.to_string() })
}
