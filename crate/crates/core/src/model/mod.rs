//! Experiment authoring model.
//!
//! An [`Experiment`] holds dialogue stages (tabs) with ordered utterances,
//! a frequently-used panel, domain records with filters and the pipeline
//! configuration. Every utterance lives in exactly one stage; the
//! frequently-used list is a view over existing utterances.

mod filter;
mod template;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{filter_records, DomainRecord, FilterSpec, Scalar};
pub use template::{check_template, render_template, slot_names};

use crate::ids::{AssetRef, ExperimentId, LanguageTag, StageId, Timestamp, UtteranceId};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("missing binding for slot {0:?}")]
    MissingBinding(String),
}

impl ModelError {
    fn not_found(kind: &'static str, id: impl ToString) -> Self {
        ModelError::NotFound { kind, id: id.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub id: StageId,
    pub title: String,
    #[serde(default)]
    pub utterance_ids: Vec<UtteranceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: UtteranceId,
    /// Template text; slots are written `{name}`.
    pub text: String,
    pub language: LanguageTag,
    #[serde(default)]
    pub pretranslations: BTreeMap<LanguageTag, String>,
    #[serde(default)]
    pub prerecorded_audio: BTreeMap<LanguageTag, AssetRef>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl Utterance {
    pub fn new(id: UtteranceId, text: &str, language: LanguageTag) -> Self {
        Self {
            id,
            text: text.to_string(),
            language,
            pretranslations: BTreeMap::new(),
            prerecorded_audio: BTreeMap::new(),
            tags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: ExperimentId,
    pub name: String,
    /// Document revision, bumped on every stored write.
    #[serde(default)]
    pub revision: u64,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub utterances: BTreeMap<UtteranceId, Utterance>,
    #[serde(default)]
    pub frequently_used: Vec<UtteranceId>,
    #[serde(default)]
    pub domain_records: Vec<DomainRecord>,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub chat_enabled: bool,
    #[serde(default)]
    pub created_at: Timestamp,
    #[serde(default)]
    pub updated_at: Timestamp,
}

impl Experiment {
    /// New experiment with a single empty stage.
    pub fn new(name: &str, pipeline: PipelineConfig) -> Self {
        let now = Timestamp::now();
        Self {
            id: ExperimentId::generate(),
            name: name.to_string(),
            revision: 0,
            stages: vec![Stage { id: StageId::new("main"), title: "Main".into(), utterance_ids: vec![] }],
            utterances: BTreeMap::new(),
            frequently_used: Vec::new(),
            domain_records: Vec::new(),
            filters: Vec::new(),
            pipeline,
            chat_enabled: false,
            created_at: now,
            updated_at: now,
        }
    }

    fn touch(&mut self) {
        self.updated_at = Timestamp::now().max(self.updated_at);
    }

    pub fn stage(&self, id: &StageId) -> Option<&Stage> {
        self.stages.iter().find(|s| &s.id == id)
    }

    fn stage_index(&self, id: &StageId) -> Result<usize, ModelError> {
        self.stages
            .iter()
            .position(|s| &s.id == id)
            .ok_or_else(|| ModelError::not_found("stage", id))
    }

    pub fn stage_by_title(&self, title: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.title == title)
    }

    pub fn utterance(&self, id: &UtteranceId) -> Option<&Utterance> {
        self.utterances.get(id)
    }

    pub fn utterance_mut(&mut self, id: &UtteranceId) -> Option<&mut Utterance> {
        self.utterances.get_mut(id)
    }

    /// The stage that currently holds `id`.
    pub fn stage_of(&self, id: &UtteranceId) -> Option<&Stage> {
        self.stages.iter().find(|s| s.utterance_ids.contains(id))
    }

    /// All utterance ids, stage by stage, in on-screen order.
    pub fn utterance_ids(&self) -> impl Iterator<Item = &UtteranceId> {
        self.stages.iter().flat_map(|s| s.utterance_ids.iter())
    }

    pub fn add_stage(&mut self, title: &str) -> StageId {
        let id = StageId::generate();
        self.stages.push(Stage { id: id.clone(), title: title.to_string(), utterance_ids: vec![] });
        self.touch();
        id
    }

    pub fn create_utterance(
        &mut self,
        stage_id: &StageId,
        text: &str,
        language: LanguageTag,
    ) -> Result<UtteranceId, ModelError> {
        let idx = self.stage_index(stage_id)?;
        if text.trim().is_empty() {
            return Err(ModelError::Validation("utterance text is empty".into()));
        }
        if !language.is_valid() {
            return Err(ModelError::Validation(format!("invalid language tag {language}")));
        }
        let id = UtteranceId::generate();
        self.utterances.insert(id.clone(), Utterance::new(id.clone(), text, language));
        self.stages[idx].utterance_ids.push(id.clone());
        self.touch();
        Ok(id)
    }

    pub fn edit_utterance(&mut self, id: &UtteranceId, text: &str) -> Result<(), ModelError> {
        if text.trim().is_empty() {
            return Err(ModelError::Validation("utterance text is empty".into()));
        }
        let utt = self.utterances.get_mut(id).ok_or_else(|| ModelError::not_found("utterance", id))?;
        utt.text = text.to_string();
        self.touch();
        Ok(())
    }

    /// Remove an utterance from its stage, the frequently-used panel and the
    /// utterance table.
    pub fn delete_utterance(&mut self, id: &UtteranceId) -> Result<(), ModelError> {
        if self.utterances.remove(id).is_none() {
            return Err(ModelError::not_found("utterance", id));
        }
        for stage in &mut self.stages {
            stage.utterance_ids.retain(|u| u != id);
        }
        self.frequently_used.retain(|u| u != id);
        self.touch();
        Ok(())
    }

    /// Move `id` into `target` at `position` (0 ≤ position ≤ target length,
    /// measured before removal from the source stage).
    pub fn move_utterance(
        &mut self,
        id: &UtteranceId,
        target: &StageId,
        position: usize,
    ) -> Result<(), ModelError> {
        let target_idx = self.stage_index(target)?;
        let (source_idx, source_pos) = self
            .stages
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.utterance_ids.iter().position(|u| u == id).map(|p| (i, p)))
            .ok_or_else(|| ModelError::not_found("utterance", id))?;
        let target_len = self.stages[target_idx].utterance_ids.len();
        if position > target_len {
            return Err(ModelError::Validation(format!(
                "position {position} out of range 0..={target_len}"
            )));
        }
        let moved = self.stages[source_idx].utterance_ids.remove(source_pos);
        let list = &mut self.stages[target_idx].utterance_ids;
        list.insert(position.min(list.len()), moved);
        self.touch();
        Ok(())
    }

    pub fn set_frequently_used(&mut self, id: &UtteranceId, flag: bool) -> Result<(), ModelError> {
        if !self.utterances.contains_key(id) {
            return Err(ModelError::not_found("utterance", id));
        }
        let present = self.frequently_used.contains(id);
        match (flag, present) {
            (true, false) => self.frequently_used.push(id.clone()),
            (false, true) => self.frequently_used.retain(|u| u != id),
            _ => return Ok(()),
        }
        self.touch();
        Ok(())
    }

    /// Records admitted by the experiment's configured filters.
    pub fn filtered_records(&self) -> Vec<&DomainRecord> {
        filter_records(&self.domain_records, &self.filters)
    }

    /// Every invariant violation of the document, including pipeline rules.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.stages.is_empty() {
            out.push("experiment has no stages".to_string());
        }
        let mut stage_ids = BTreeSet::new();
        let mut homed: BTreeMap<&UtteranceId, usize> = BTreeMap::new();
        for stage in &self.stages {
            if !stage_ids.insert(&stage.id) {
                out.push(format!("duplicate stage id {}", stage.id));
            }
            for u in &stage.utterance_ids {
                *homed.entry(u).or_default() += 1;
                if !self.utterances.contains_key(u) {
                    out.push(format!("stage {} lists unknown utterance {u}", stage.id));
                }
            }
        }
        for (id, utt) in &self.utterances {
            if &utt.id != id {
                out.push(format!("utterance key {id} does not match its id {}", utt.id));
            }
            match homed.get(id) {
                None => out.push(format!("utterance {id} is not in any stage")),
                Some(1) => {}
                Some(n) => out.push(format!("utterance {id} appears {n} times across stages")),
            }
            if utt.text.trim().is_empty() {
                out.push(format!("utterance {id} has empty text"));
            }
            if let Err(e) = check_template(&utt.text) {
                out.push(format!("utterance {id}: {e}"));
            }
            if !utt.language.is_valid() {
                out.push(format!("utterance {id} has invalid language {}", utt.language));
            }
            for lang in utt.pretranslations.keys().chain(utt.prerecorded_audio.keys()) {
                if !lang.is_valid() {
                    out.push(format!("utterance {id} has invalid language key {lang}"));
                }
            }
            // A recording in the source language is fine; a translation into it is not.
            if let Some(lang) = utt.pretranslations.keys().find(|l| l.same_language(&utt.language)) {
                out.push(format!("utterance {id} has a translation into its own language {lang}"));
            }
        }
        let mut seen_fu = BTreeSet::new();
        for u in &self.frequently_used {
            if !self.utterances.contains_key(u) {
                out.push(format!("frequently-used id {u} does not resolve"));
            }
            if !seen_fu.insert(u) {
                out.push(format!("frequently-used id {u} listed twice"));
            }
        }
        let mut record_ids = BTreeSet::new();
        for r in &self.domain_records {
            if !record_ids.insert(&r.id) {
                out.push(format!("duplicate domain record id {}", r.id));
            }
            if r.attributes.keys().any(|k| k.is_empty()) {
                out.push(format!("domain record {} has an empty attribute name", r.id));
            }
        }
        let mut filter_attrs = BTreeSet::new();
        for f in &self.filters {
            if !filter_attrs.insert(&f.attribute) {
                out.push(format!("duplicate filter attribute {}", f.attribute));
            }
        }
        if let Err(violations) = crate::pipeline::validate(&self.pipeline) {
            out.extend(violations.into_iter().map(|v| v.to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Validation(v.join("; ")))
        }
    }
}
