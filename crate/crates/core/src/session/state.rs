//! Event-derived session state. [`SessionCore::apply`] is the only way state
//! changes, for live sessions and for replay alike.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::*;
use crate::adapters::{Candidate, Payload};
use crate::ids::{AssetRef, LanguageTag, SessionId, StageId, Timestamp, UtteranceId};
use crate::model::{Experiment, Scalar};
use crate::pipeline::{derive_wizard_tasks, ComponentMode, ComponentSlot, SlotKind, TaskKind, WizardTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    ParticipantReady,
    Running,
    Ended,
}

/// Component output held back for the wizard at the start of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Staged {
    pub seq: u64,
    pub slot: SlotKind,
    pub candidates: Vec<Candidate>,
}

/// Work waiting for the wizard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub shown_seq: u64,
    /// Latest event that fed the turn value the wizard works on.
    pub origin_seq: u64,
    pub turn: u64,
    pub task: usize,
    pub kind: TaskKind,
    pub span: Vec<SlotKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<TurnValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Candidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editable_text: Option<String>,
}

/// One input travelling through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// Seq of the event that opened the turn.
    pub anchor: u64,
    pub origin_seq: Option<u64>,
    pub action_seq: Option<u64>,
    /// Index of the next slot to route through.
    pub cursor: usize,
    pub value: TurnValue,
    pub last_feed_seq: u64,
    pub staged: Option<Staged>,
    pub pending: Option<PendingItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckRecord {
    pub seq: u64,
    pub ts: Timestamp,
    pub kind: AckKind,
}

/// An output delivered to the participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub ts: Timestamp,
    pub text: String,
    pub language: Option<LanguageTag>,
    pub audio: Option<AssetRef>,
    pub origin_seq: Option<u64>,
    pub action_seq: Option<u64>,
    pub utterance_id: Option<UtteranceId>,
    pub acks: Vec<AckRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEntry {
    pub seq: u64,
    pub ts: Timestamp,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {seq} ({event_type}): {reason}")]
pub struct ApplyError {
    pub seq: u64,
    pub event_type: EventType,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SessionCore {
    pub(crate) session_id: SessionId,
    pub(crate) experiment: Arc<Experiment>,
    pub(crate) tasks: Vec<WizardTask>,
    pub(crate) state: SessionState,
    pub(crate) next_seq: u64,
    pub(crate) last_ts: Timestamp,
    pub(crate) turn: Option<Turn>,
    pub(crate) history: Vec<HistoryEntry>,
    pub(crate) notes: Vec<NoteEntry>,
    pub(crate) active_stage: Option<StageId>,
    pub(crate) filters: BTreeMap<String, Vec<Scalar>>,
    pub(crate) end_reason: Option<String>,
}

/// Language of a slot's output given the value flowing into it.
pub(crate) fn output_language(slot: &ComponentSlot, value: &TurnValue) -> Option<LanguageTag> {
    let s = &slot.settings;
    match slot.kind {
        SlotKind::InputMt | SlotKind::OutputMt => s.target_language.clone().or_else(|| value.language.clone()),
        SlotKind::Asr | SlotKind::Dm => s.language.clone().or_else(|| value.language.clone()),
        _ => value.language.clone().or_else(|| s.language.clone()),
    }
}

/// Value after `slot` produced `payload`.
pub(crate) fn feed_value(slot: &ComponentSlot, value: &TurnValue, payload: &Payload, prepared: bool) -> TurnValue {
    let mut next = value.clone();
    match payload {
        Payload::Text(t) => {
            next.text = Some(t.clone());
            next.audio = None;
        }
        Payload::Audio(a) => next.audio = Some(a.clone()),
    }
    next.language = output_language(slot, value);
    if !prepared {
        next.utterance_id = None;
    }
    next
}

impl SessionCore {
    /// Build the initial state from a `session_start` event.
    pub fn from_start(event: &SessionEvent) -> Result<Self, ApplyError> {
        let fail = |reason: String| ApplyError { seq: event.seq, event_type: event.event_type(), reason };
        let EventBody::SessionStart(start) = &event.body else {
            return Err(fail("log must begin with session_start".into()));
        };
        if event.seq != 0 {
            return Err(fail("session_start must have seq 0".into()));
        }
        let experiment = start.experiment.clone();
        let tasks = derive_wizard_tasks(&experiment.pipeline).map_err(|v| {
            fail(format!("invalid pipeline: {}", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))
        })?;
        let filters = experiment.filters.iter().map(|f| (f.attribute.clone(), f.allowed_values.clone())).collect();
        let active_stage = experiment.stages.first().map(|s| s.id.clone());
        Ok(Self {
            session_id: event.session_id.clone(),
            experiment: Arc::new(experiment),
            tasks,
            state: SessionState::Created,
            next_seq: 1,
            last_ts: event.ts,
            turn: None,
            history: Vec::new(),
            notes: Vec::new(),
            active_stage,
            filters,
            end_reason: None,
        })
    }

    pub(crate) fn task_at(&self, kind: SlotKind) -> Option<usize> {
        self.tasks.iter().position(|t| t.first() == kind)
    }

    /// Slot index where a wizard-initiated output enters the pipeline:
    /// right after whatever produces the system response.
    pub(crate) fn initiative_entry(&self) -> usize {
        match self.tasks.iter().find(|t| t.covers(SlotKind::Dm)) {
            Some(t) => t.last().index() + 1,
            None => SlotKind::Dm.index() + 1,
        }
    }

    pub(crate) fn slot(&self, kind: SlotKind) -> &ComponentSlot {
        self.experiment.pipeline.slot(kind)
    }

    pub fn apply(&mut self, ev: &SessionEvent) -> Result<(), ApplyError> {
        let fail = |reason: String| ApplyError { seq: ev.seq, event_type: ev.event_type(), reason };
        if ev.session_id != self.session_id {
            return Err(fail(format!("belongs to session {}", ev.session_id)));
        }
        if ev.seq != self.next_seq {
            return Err(fail(format!("expected seq {}", self.next_seq)));
        }
        if ev.ts < self.last_ts {
            return Err(fail(format!("timestamp {} goes back before {}", ev.ts.0, self.last_ts.0)));
        }
        if self.state == SessionState::Ended {
            return Err(fail("session already ended".into()));
        }
        self.apply_body(ev).map_err(fail)?;
        self.next_seq += 1;
        self.last_ts = ev.ts;
        Ok(())
    }

    fn open_turn(&self, anchor: u64) -> Result<&Turn, String> {
        match &self.turn {
            Some(t) if t.anchor == anchor => Ok(t),
            Some(t) => Err(format!("turn {anchor} is not the open turn {}", t.anchor)),
            None => Err(format!("turn {anchor} is not open")),
        }
    }

    fn apply_body(&mut self, ev: &SessionEvent) -> Result<(), String> {
        match &ev.body {
            EventBody::SessionStart(_) => Err("duplicate session_start".into()),
            EventBody::ParticipantReady(_) => {
                if self.state != SessionState::Created {
                    return Err("participant already ready".into());
                }
                self.state = SessionState::ParticipantReady;
                Ok(())
            }
            EventBody::ParticipantInput(p) => {
                if self.state == SessionState::Created {
                    return Err("participant not ready".into());
                }
                if self.turn.is_some() {
                    return Err("a turn is already in flight".into());
                }
                self.state = SessionState::Running;
                self.turn = Some(Turn {
                    anchor: ev.seq,
                    origin_seq: Some(ev.seq),
                    action_seq: None,
                    cursor: 0,
                    value: TurnValue::from_payload(&p.input, p.language.clone()),
                    last_feed_seq: ev.seq,
                    staged: None,
                    pending: None,
                });
                Ok(())
            }
            EventBody::ComponentOutput(p) => {
                let turn = self.open_turn(p.turn)?;
                if turn.pending.is_some() {
                    return Err("turn is waiting for the wizard".into());
                }
                let slot = self.slot(p.slot).clone();
                let idx = p.slot.index();
                if !slot.mode.is_active() || slot.kind.is_plain_io() {
                    return Err(format!("{} does not run a component", p.slot.label()));
                }
                if idx < turn.cursor {
                    return Err(format!("{} already passed", p.slot.label()));
                }
                let Some(best) = p.candidates.first() else {
                    return Err("no candidates".into());
                };
                let starts_task = self.task_at(p.slot).is_some();
                let turn = self.turn.as_mut().expect("checked above");
                if starts_task {
                    if slot.mode != ComponentMode::Correcting || turn.staged.is_some() {
                        return Err(format!("{} output is not expected", p.slot.label()));
                    }
                    turn.staged = Some(Staged { seq: ev.seq, slot: p.slot, candidates: p.candidates.clone() });
                } else {
                    if slot.mode != ComponentMode::BlackBox {
                        return Err(format!("{} is not automatic", p.slot.label()));
                    }
                    turn.value = feed_value(&slot, &turn.value, &best.payload, p.prepared);
                    turn.cursor = idx + 1;
                    turn.last_feed_seq = ev.seq;
                }
                Ok(())
            }
            EventBody::WizardShown(p) => {
                let turn = self.open_turn(p.turn)?;
                if turn.pending.is_some() {
                    return Err("wizard already has a pending item".into());
                }
                let task = self.tasks.get(p.task).ok_or_else(|| format!("no wizard task {}", p.task))?;
                if task.span != p.span {
                    return Err("span does not match the task".into());
                }
                if task.first().index() < turn.cursor {
                    return Err("task already passed".into());
                }
                let pending = PendingItem {
                    shown_seq: ev.seq,
                    origin_seq: turn.last_feed_seq,
                    turn: p.turn,
                    task: p.task,
                    kind: task.kind,
                    span: task.span.clone(),
                    context: p.context.clone(),
                    candidates: p.candidates.clone(),
                    editable_text: p.editable_text.clone(),
                };
                self.turn.as_mut().expect("checked above").pending = Some(pending);
                Ok(())
            }
            EventBody::WizardAction(p) => self.apply_wizard_action(ev.seq, p),
            EventBody::SystemOutput(p) => {
                let Some(turn) = &self.turn else {
                    return Err("no turn to answer".into());
                };
                if turn.pending.is_some() {
                    return Err("turn is waiting for the wizard".into());
                }
                if turn.origin_seq != p.origin_seq || turn.action_seq != p.action_seq {
                    return Err("output does not match the open turn".into());
                }
                self.history.push(HistoryEntry {
                    seq: ev.seq,
                    ts: ev.ts,
                    text: p.text.clone(),
                    language: p.language.clone(),
                    audio: p.audio.clone(),
                    origin_seq: p.origin_seq,
                    action_seq: p.action_seq,
                    utterance_id: p.utterance_id.clone(),
                    acks: Vec::new(),
                });
                self.turn = None;
                Ok(())
            }
            EventBody::DeliveryAck(p) => {
                let entry = self
                    .history
                    .iter_mut()
                    .find(|h| h.seq == p.output_seq)
                    .ok_or_else(|| format!("no output with seq {}", p.output_seq))?;
                entry.acks.push(AckRecord { seq: ev.seq, ts: ev.ts, kind: p.kind });
                Ok(())
            }
            EventBody::Note(p) => {
                self.notes.push(NoteEntry { seq: ev.seq, ts: ev.ts, text: p.text.clone() });
                Ok(())
            }
            EventBody::FilterChange(p) => {
                self.filters.insert(p.attribute.clone(), p.values.clone());
                Ok(())
            }
            EventBody::StageSwitch(p) => {
                if self.experiment.stage(&p.stage_id).is_none() {
                    return Err(format!("unknown stage {}", p.stage_id));
                }
                self.active_stage = Some(p.stage_id.clone());
                Ok(())
            }
            EventBody::Error(p) => {
                if p.turn_aborted {
                    let anchor = p.turn.ok_or("aborting error without a turn")?;
                    self.open_turn(anchor)?;
                    self.turn = None;
                }
                Ok(())
            }
            EventBody::SessionEnd(p) => {
                self.state = SessionState::Ended;
                self.turn = None;
                self.end_reason = Some(p.reason.clone());
                Ok(())
            }
        }
    }

    fn apply_wizard_action(&mut self, seq: u64, p: &WizardActionEvent) -> Result<(), String> {
        if let WizardAction::FreeText { .. } = p.action {
            if !self.experiment.chat_enabled {
                return Err("free text is disabled".into());
            }
        }
        match p.turn {
            None => {
                if self.state == SessionState::Created {
                    return Err("participant not ready".into());
                }
                if self.turn.is_some() {
                    return Err("a turn is already in flight".into());
                }
                if !p.action.is_response() {
                    return Err("nothing to correct".into());
                }
                self.state = SessionState::Running;
                self.turn = Some(Turn {
                    anchor: seq,
                    origin_seq: None,
                    action_seq: Some(seq),
                    cursor: self.initiative_entry(),
                    value: p.resolved.clone(),
                    last_feed_seq: seq,
                    staged: None,
                    pending: None,
                });
                Ok(())
            }
            Some(anchor) => {
                let turn = self.open_turn(anchor)?;
                let pending = turn.pending.as_ref().ok_or("nothing pending for the wizard")?;
                check_action(pending, &p.action)?;
                let cursor = self.tasks[pending.task].last().index() + 1;
                let turn = self.turn.as_mut().expect("checked above");
                turn.value = p.resolved.clone();
                turn.cursor = cursor;
                turn.action_seq = Some(seq);
                turn.last_feed_seq = seq;
                turn.staged = None;
                turn.pending = None;
                Ok(())
            }
        }
    }
}

/// Whether `action` may resolve `pending`.
pub(crate) fn check_action(pending: &PendingItem, action: &WizardAction) -> Result<(), String> {
    match (pending.kind, action) {
        (TaskKind::Simulate, a) if a.is_response() => Ok(()),
        (TaskKind::Correct, WizardAction::PickCandidate { index }) => match &pending.candidates {
            Some(c) if *index < c.len() => Ok(()),
            Some(c) => Err(format!("candidate {index} out of range ({} shown)", c.len())),
            None => Err("no candidates were shown".into()),
        },
        (TaskKind::Correct, WizardAction::SubmitCorrection { .. } | WizardAction::Approve) => Ok(()),
        (TaskKind::Simulate, _) => Err("this task needs an utterance or free text".into()),
        (TaskKind::Correct, _) => Err("this task needs a correction".into()),
    }
}
