//! Role-specific projections of a session.
//!
//! The participant sees only what was delivered to them. Everything about
//! the pipeline, the wizard and pending work stays on the wizard side.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AckKind, EventBody, PendingItem, Session, SessionState};
use crate::adapters::Payload;
use crate::ids::{AssetRef, LanguageTag, SessionId, StageId, Timestamp};
use crate::model::{filter_records, DomainRecord, Experiment, FilterSpec, Scalar};
use crate::pipeline::SlotKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantOutput {
    pub seq: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AssetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub session_id: SessionId,
    pub state: SessionState,
    pub outputs: Vec<ParticipantOutput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// From the participant (raw input or its recognition).
    In,
    /// Delivered to the participant.
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WizardHistoryItem {
    pub seq: u64,
    pub ts: Timestamp,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AssetRef>,
    /// Set for recognised speech.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<SlotKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acks: Vec<AckKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WizardView {
    pub session_id: SessionId,
    pub state: SessionState,
    pub experiment: Experiment,
    pub tasks: Vec<String>,
    /// Components are still working on the open turn; the wizard has
    /// nothing to answer yet.
    pub turn_in_flight: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingItem>,
    pub history: Vec<WizardHistoryItem>,
    pub notes: Vec<super::NoteEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_stage: Option<StageId>,
    pub filters: BTreeMap<String, Vec<Scalar>>,
    /// Domain records matching the current filters.
    pub records: Vec<DomainRecord>,
}

impl Session {
    pub fn participant_view(&self) -> ParticipantView {
        ParticipantView {
            session_id: self.id().clone(),
            state: self.state(),
            outputs: self
                .history()
                .iter()
                .map(|h| ParticipantOutput {
                    seq: h.seq,
                    text: h.text.clone(),
                    audio: h.audio.clone(),
                    language: h.language.clone(),
                })
                .collect(),
        }
    }

    pub fn wizard_view(&self) -> WizardView {
        let mut history = Vec::new();
        for ev in self.events() {
            match &ev.body {
                EventBody::ParticipantInput(p) => {
                    let (text, audio) = match &p.input {
                        Payload::Text(t) => (Some(t.clone()), None),
                        Payload::Audio(a) => (None, Some(a.clone())),
                    };
                    history.push(WizardHistoryItem { seq: ev.seq, ts: ev.ts, direction: Direction::In, text, audio, via: None, acks: vec![] });
                }
                EventBody::ComponentOutput(c) if c.slot == SlotKind::Asr => {
                    history.push(WizardHistoryItem {
                        seq: ev.seq,
                        ts: ev.ts,
                        direction: Direction::In,
                        text: c.candidates.first().and_then(|x| x.payload.as_text()).map(str::to_string),
                        audio: None,
                        via: Some(SlotKind::Asr),
                        acks: vec![],
                    });
                }
                _ => {}
            }
        }
        for h in self.history() {
            history.push(WizardHistoryItem {
                seq: h.seq,
                ts: h.ts,
                direction: Direction::Out,
                text: Some(h.text.clone()),
                audio: h.audio.clone(),
                via: None,
                acks: h.acks.iter().map(|a| a.kind).collect(),
            });
        }
        history.sort_by_key(|h| h.seq);

        let filters = self.core.filters.clone();
        let specs: Vec<FilterSpec> = filters.iter().map(|(a, v)| FilterSpec::new(a, v.iter().cloned())).collect();
        let experiment = self.experiment().as_ref().clone();
        let records = filter_records(&experiment.domain_records, &specs).into_iter().cloned().collect();
        WizardView {
            session_id: self.id().clone(),
            state: self.state(),
            tasks: self.tasks().iter().map(|t| t.to_string()).collect(),
            turn_in_flight: self.turn().is_some_and(|t| t.pending.is_none()),
            pending: self.pending().cloned(),
            history,
            notes: self.notes().to_vec(),
            active_stage: self.active_stage().cloned(),
            filters,
            records,
            experiment,
        }
    }
}
