//! File-backed persistence under one data directory:
//!
//! ```text
//! experiments/<id>.json      experiment documents
//! sessions/<id>.ndjson       append-only event logs, one event per line
//! sessions/<id>.tokens.json  capability tokens for the join URLs
//! assets/<sha256>            audio, addressed by content hash
//! ```
//!
//! Every event is written to the log with its own `write` call before it is
//! broadcast, so a killed process loses at most the line being written. A
//! torn final line is cut off on load.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use ozwoz_core::model::Experiment;
use ozwoz_core::session::SessionEvent;
use ozwoz_core::{ExperimentId, SessionId};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: line {line}: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Capability tokens of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokens {
    pub wizard: String,
    pub participant: String,
}

impl Tokens {
    pub fn generate() -> Self {
        Self {
            wizard: uuid::Uuid::new_v4().simple().to_string(),
            participant: uuid::Uuid::new_v4().simple().to_string(),
        }
    }
}

/// A session log read back from disk.
#[derive(Debug)]
pub struct LoadedLog {
    pub events: Vec<SessionEvent>,
    /// Bytes of a partial last line that were cut off.
    pub truncated_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    fsync: bool,
}

impl Store {
    /// Open (and create if needed) a data directory. With `fsync` every log
    /// line is also synced to the device, not just handed to the OS.
    pub fn open(root: &Path, fsync: bool) -> Result<Self, StoreError> {
        for sub in ["experiments", "sessions", "assets"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root: root.to_path_buf(), fsync })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn experiment_path(&self, id: &ExperimentId) -> PathBuf {
        self.root.join("experiments").join(format!("{}.json", safe_name(id.as_str())))
    }

    pub fn log_path(&self, id: &SessionId) -> PathBuf {
        self.root.join("sessions").join(format!("{}.ndjson", safe_name(id.as_str())))
    }

    fn tokens_path(&self, id: &SessionId) -> PathBuf {
        self.root.join("sessions").join(format!("{}.tokens.json", safe_name(id.as_str())))
    }

    pub fn load_experiments(&self) -> Result<Vec<Experiment>, StoreError> {
        let dir = self.root.join("experiments");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let exp = serde_json::from_str(&text).map_err(|source| StoreError::Json { path: path.clone(), source })?;
                out.push(exp);
            }
        }
        Ok(out)
    }

    pub fn save_experiment(&self, experiment: &Experiment) -> Result<(), StoreError> {
        let path = self.experiment_path(&experiment.id);
        let text = serde_json::to_string_pretty(experiment)
            .map_err(|source| StoreError::Json { path: path.clone(), source })?;
        write_atomic(&path, text.as_bytes())
    }

    pub fn delete_experiment(&self, id: &ExperimentId) -> Result<(), StoreError> {
        let path = self.experiment_path(id);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(io_err(&path)(e)),
            _ => Ok(()),
        }
    }

    /// Ids of all sessions with a log on disk, sorted.
    pub fn session_ids(&self) -> Result<Vec<SessionId>, StoreError> {
        let dir = self.root.join("sessions");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let name = entry.map_err(io_err(&dir))?.file_name();
            if let Some(id) = name.to_string_lossy().strip_suffix(".ndjson") {
                ids.push(SessionId::new(id));
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Create the log of a new session; fails if one exists.
    pub fn create_log(&self, id: &SessionId) -> Result<LogWriter, StoreError> {
        let path = self.log_path(id);
        let file = OpenOptions::new().append(true).create_new(true).open(&path).map_err(io_err(&path))?;
        Ok(LogWriter { file, path, fsync: self.fsync })
    }

    pub fn append_log(&self, id: &SessionId) -> Result<LogWriter, StoreError> {
        let path = self.log_path(id);
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        Ok(LogWriter { file, path, fsync: self.fsync })
    }

    /// Read a log, cutting off a torn last line in the file itself so that
    /// later appends start on a line boundary.
    pub fn read_log(&self, id: &SessionId) -> Result<LoadedLog, StoreError> {
        self.load_log(id, true)
    }

    /// Read a log without touching the file; a torn last line is skipped.
    pub fn peek_log(&self, id: &SessionId) -> Result<LoadedLog, StoreError> {
        self.load_log(id, false)
    }

    fn load_log(&self, id: &SessionId, repair: bool) -> Result<LoadedLog, StoreError> {
        let path = self.log_path(id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let truncated_bytes = bytes.len() - complete;
        if repair && truncated_bytes > 0 {
            let file = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            file.set_len(complete as u64).map_err(io_err(&path))?;
            file.sync_all().map_err(io_err(&path))?;
        }
        let text = std::str::from_utf8(&bytes[..complete])
            .map_err(|e| StoreError::CorruptLog { path: path.clone(), line: 0, reason: e.to_string() })?;
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line)
                .map_err(|e| StoreError::CorruptLog { path: path.clone(), line: i + 1, reason: e.to_string() })?;
            events.push(ev);
        }
        Ok(LoadedLog { events, truncated_bytes })
    }

    pub fn save_tokens(&self, id: &SessionId, tokens: &Tokens) -> Result<(), StoreError> {
        let path = self.tokens_path(id);
        let text = serde_json::to_string(tokens).map_err(|source| StoreError::Json { path: path.clone(), source })?;
        write_atomic(&path, text.as_bytes())
    }

    pub fn load_tokens(&self, id: &SessionId) -> Result<Tokens, StoreError> {
        let path = self.tokens_path(id);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| StoreError::Json { path, source })
    }

    /// Store an asset and return its id, the hex SHA-256 of the bytes.
    pub fn put_asset(&self, bytes: &[u8], content_type: &str) -> Result<String, StoreError> {
        let id = format!("{:x}", Sha256::digest(bytes));
        let path = self.root.join("assets").join(&id);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        write_atomic(&path.with_extension("type"), content_type.as_bytes())?;
        Ok(id)
    }

    /// Bytes and content type of an asset, `None` if unknown.
    pub fn get_asset(&self, id: &str) -> Result<Option<(Vec<u8>, String)>, StoreError> {
        if !is_asset_id(id) {
            return Ok(None);
        }
        let path = self.root.join("assets").join(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let content_type = fs::read_to_string(path.with_extension("type"))
            .unwrap_or_else(|_| "application/octet-stream".to_string());
        Ok(Some((bytes, content_type)))
    }
}

pub fn is_asset_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Ids come from clients; keep them from escaping the directory.
fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Append handle on one session log.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
    path: PathBuf,
    fsync: bool,
}

impl LogWriter {
    /// Write one event as one line in a single call.
    pub fn append(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        let mut line = event.to_json_line();
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        if self.fsync {
            self.file.sync_data().map_err(io_err(&self.path))?;
        }
        Ok(())
    }
}
