//! Experiment documents: in-memory copies backed by the store, with a
//! revision counter as lost-update guard.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde_json::Value;
use thiserror::Error;

use ozwoz_core::model::Experiment;
use ozwoz_core::pipeline::{validate, PipelineConfig, RuleViolation};
use ozwoz_core::{ExperimentId, LanguageTag, Timestamp};

use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("experiment {0} not found")]
    NotFound(ExperimentId),
    #[error("revision conflict: document is at revision {current}, request was based on {given}")]
    Conflict { current: u64, given: u64 },
    #[error("invalid experiment: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("pipeline violates the mode rules")]
    Pipeline(Vec<RuleViolation>),
    #[error("import row {row}: {message}")]
    Import { row: usize, message: String },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Header required for utterance import.
pub const IMPORT_HEADER: [&str; 4] = ["stage", "text", "language", "frequently_used"];

/// Fields the server owns; clients cannot set them.
const SERVER_FIELDS: [&str; 4] = ["id", "revision", "created_at", "updated_at"];

pub struct Catalog {
    store: Store,
    docs: Mutex<BTreeMap<ExperimentId, Experiment>>,
}

impl Catalog {
    pub fn load(store: Store) -> Result<Self, CatalogError> {
        let docs = store.load_experiments()?.into_iter().map(|e| (e.id.clone(), e)).collect();
        Ok(Self { store, docs: Mutex::new(docs) })
    }

    fn docs(&self) -> std::sync::MutexGuard<'_, BTreeMap<ExperimentId, Experiment>> {
        self.docs.lock().expect("not poisoned")
    }

    pub fn list(&self) -> Vec<Experiment> {
        self.docs().values().cloned().collect()
    }

    pub fn get(&self, id: &ExperimentId) -> Result<Experiment, CatalogError> {
        self.docs().get(id).cloned().ok_or_else(|| CatalogError::NotFound(id.clone()))
    }

    /// Create from a partial document; missing fields take the defaults
    /// of a new text-chat experiment.
    pub fn create(&self, body: Value) -> Result<Experiment, CatalogError> {
        let Value::Object(fields) = body else {
            return Err(CatalogError::Malformed("expected a JSON object".into()));
        };
        let name = fields.get("name").and_then(Value::as_str).unwrap_or("Untitled experiment");
        let base = Experiment::new(name, PipelineConfig::text_chat());
        let mut doc = serde_json::to_value(&base).expect("experiments serialize");
        for (k, v) in fields {
            if !SERVER_FIELDS.contains(&k.as_str()) {
                doc[k] = v;
            }
        }
        let exp: Experiment = serde_json::from_value(doc).map_err(|e| CatalogError::Malformed(e.to_string()))?;
        check(&exp)?;
        self.store.save_experiment(&exp)?;
        self.docs().insert(exp.id.clone(), exp.clone());
        Ok(exp)
    }

    /// Replace a document. The body's `revision` must match the stored one.
    pub fn replace(&self, id: &ExperimentId, body: Value) -> Result<Experiment, CatalogError> {
        let Value::Object(mut fields) = body else {
            return Err(CatalogError::Malformed("expected a JSON object".into()));
        };
        let given = fields
            .get("revision")
            .and_then(Value::as_u64)
            .ok_or_else(|| CatalogError::Malformed("revision is required".into()))?;
        let mut docs = self.docs();
        let current = docs.get(id).ok_or_else(|| CatalogError::NotFound(id.clone()))?;
        if current.revision != given {
            return Err(CatalogError::Conflict { current: current.revision, given });
        }
        fields.insert("id".into(), Value::String(id.to_string()));
        fields.insert("created_at".into(), serde_json::to_value(current.created_at).expect("number"));
        let mut exp: Experiment =
            serde_json::from_value(Value::Object(fields)).map_err(|e| CatalogError::Malformed(e.to_string()))?;
        check(&exp)?;
        bump(&mut exp, current);
        self.store.save_experiment(&exp)?;
        docs.insert(id.clone(), exp.clone());
        Ok(exp)
    }

    pub fn delete(&self, id: &ExperimentId) -> Result<(), CatalogError> {
        let mut docs = self.docs();
        if docs.remove(id).is_none() {
            return Err(CatalogError::NotFound(id.clone()));
        }
        self.store.delete_experiment(id)?;
        Ok(())
    }

    /// Swap the pipeline. `revision`, when given, must match.
    pub fn set_pipeline(
        &self,
        id: &ExperimentId,
        pipeline: PipelineConfig,
        revision: Option<u64>,
    ) -> Result<Experiment, CatalogError> {
        validate(&pipeline).map_err(CatalogError::Pipeline)?;
        self.update(id, revision, |exp| {
            exp.pipeline = pipeline;
            Ok(())
        })
    }

    /// Import utterances from CSV; all rows or none. Returns the number of
    /// utterances created and the updated document.
    pub fn import_csv(
        &self,
        id: &ExperimentId,
        csv_bytes: &[u8],
        revision: Option<u64>,
    ) -> Result<(usize, Experiment), CatalogError> {
        let mut count = 0;
        let exp = self.update(id, revision, |exp| {
            count = import_rows(exp, csv_bytes)?;
            Ok(())
        })?;
        Ok((count, exp))
    }

    fn update(
        &self,
        id: &ExperimentId,
        revision: Option<u64>,
        edit: impl FnOnce(&mut Experiment) -> Result<(), CatalogError>,
    ) -> Result<Experiment, CatalogError> {
        let mut docs = self.docs();
        let current = docs.get(id).ok_or_else(|| CatalogError::NotFound(id.clone()))?;
        if let Some(given) = revision.filter(|r| *r != current.revision) {
            return Err(CatalogError::Conflict { current: current.revision, given });
        }
        // Edit a copy so a failure leaves the stored document untouched.
        let mut exp = current.clone();
        edit(&mut exp)?;
        check(&exp)?;
        bump(&mut exp, current);
        self.store.save_experiment(&exp)?;
        docs.insert(id.clone(), exp.clone());
        Ok(exp)
    }
}

fn check(exp: &Experiment) -> Result<(), CatalogError> {
    if let Err(v) = validate(&exp.pipeline) {
        return Err(CatalogError::Pipeline(v));
    }
    let problems = exp.violations();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CatalogError::Invalid(problems))
    }
}

fn bump(exp: &mut Experiment, previous: &Experiment) {
    exp.revision = previous.revision + 1;
    exp.updated_at = Timestamp::now().max(previous.updated_at);
}

/// Apply CSV rows to `exp`. Stages are matched by title, then by id;
/// unknown names create a new stage.
fn import_rows(exp: &mut Experiment, csv_bytes: &[u8]) -> Result<usize, CatalogError> {
    let err = |row: usize, message: String| CatalogError::Import { row, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_bytes);
    let header = reader.headers().map_err(|e| err(0, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != IMPORT_HEADER {
        return Err(err(0, format!("header must be exactly {}", IMPORT_HEADER.join(","))));
    }
    let mut count = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| err(row, e.to_string()))?;
        let (stage, text, language, frequent) = (&record[0], &record[1], &record[2], &record[3]);
        if stage.trim().is_empty() {
            return Err(err(row, "stage is empty".into()));
        }
        let language = LanguageTag::parse(language).ok_or_else(|| err(row, format!("invalid language {language:?}")))?;
        let frequent = match frequent {
            "true" => true,
            "false" => false,
            other => return Err(err(row, format!("frequently_used must be true or false, got {other:?}"))),
        };
        let stage_id = match exp.stage_by_title(stage).or_else(|| exp.stages.iter().find(|s| s.id.as_str() == stage)) {
            Some(s) => s.id.clone(),
            None => exp.add_stage(stage),
        };
        let utt = exp.create_utterance(&stage_id, text, language).map_err(|e| err(row, e.to_string()))?;
        if frequent {
            exp.set_frequently_used(&utt, true).map_err(|e| err(row, e.to_string()))?;
        }
        count += 1;
    }
    Ok(count)
}
