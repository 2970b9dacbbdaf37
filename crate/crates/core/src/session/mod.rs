//! Live session runtime.
//!
//! A [`Session`] is an append-only event log plus the state folded from
//! it. Commands validate against the state, append events, and then route
//! the open turn as far as possible without outside help. Component calls
//! are handed back to the caller as an [`Invocation`]; the caller runs it
//! (see [`driver`]) and reports the result with
//! [`Session::complete_invocation`]. Replaying a log through the same fold
//! reproduces the live state exactly.

pub mod driver;
pub mod event;
mod state;
mod views;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use event::*;
pub use state::{AckRecord, ApplyError, HistoryEntry, NoteEntry, PendingItem, SessionState, Staged, Turn};
pub use views::{ParticipantOutput, ParticipantView, WizardHistoryItem, WizardView};

use crate::adapters::{
    degrade_delay, degrade_text_with, lookup_prepared, AdapterError, Candidate, ComponentRequest, ComponentResult,
    DegradationProfile, Payload,
};
use crate::canonical::digest64;
use crate::ids::{LanguageTag, SessionId, StageId, Timestamp};
use crate::model::{render_template, Experiment, ModelError, Scalar};
use crate::pipeline::{derive_wizard_tasks, ComponentMode, ComponentSlot, RuleViolation, SlotKind, TaskKind, WizardTask};
use state::{check_action, feed_value, output_language, SessionCore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("experiment is invalid: {0}")]
    InvalidExperiment(String),
    #[error("pipeline is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidPipeline(Vec<RuleViolation>),
    #[error("participant is not ready")]
    NotReady,
    #[error("session has ended")]
    Ended,
    #[error("a turn is still being processed")]
    TurnInFlight,
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("missing binding for slot {0:?}")]
    MissingBinding(String),
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("invocation is no longer outstanding")]
    StaleInvocation,
    #[error("internal inconsistency: {0}")]
    Internal(#[from] ApplyError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("log is empty")]
    Empty,
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
}

/// A component call the session is waiting on.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub session_id: SessionId,
    pub turn: u64,
    pub slot: SlotKind,
    pub adapter_id: String,
    pub request: ComponentRequest,
    pub timeout_ms: u64,
    /// Injected delay to wait before the result is used.
    pub delay_ms: u64,
    profile: Option<DegradationProfile>,
}

impl Invocation {
    fn ticket(&self) -> (u64, SlotKind) {
        (self.turn, self.slot)
    }
}

enum Step {
    Idle,
    Invoke(Invocation),
    Record(Actor, EventBody),
}

/// Cap on events appended by one routing pass; the pipeline has seven
/// slots, so a pass never legitimately needs more than a handful.
const MAX_ROUTING_STEPS: usize = 32;

#[derive(Debug, Clone)]
pub struct Session {
    core: SessionCore,
    events: Vec<SessionEvent>,
    trail: Option<Vec<u64>>,
}

#[derive(Serialize)]
struct DigestView<'a> {
    session_id: &'a SessionId,
    experiment_id: &'a str,
    experiment_revision: u64,
    state: SessionState,
    next_seq: u64,
    last_ts: Timestamp,
    turn: &'a Option<Turn>,
    history: &'a [HistoryEntry],
    notes: &'a [NoteEntry],
    active_stage: &'a Option<StageId>,
    filters: &'a std::collections::BTreeMap<String, Vec<Scalar>>,
    end_reason: &'a Option<String>,
}

impl Session {
    /// Start a session over a snapshot of `experiment`. Later edits to the
    /// experiment do not reach the running session.
    pub fn start(experiment: &Experiment, session_id: SessionId, now: Timestamp) -> Result<Self, SessionError> {
        experiment.validate().map_err(|e| SessionError::InvalidExperiment(e.to_string()))?;
        derive_wizard_tasks(&experiment.pipeline).map_err(SessionError::InvalidPipeline)?;
        let start = SessionEvent {
            seq: 0,
            ts: now,
            session_id,
            actor: Actor::System,
            body: EventBody::SessionStart(Box::new(SessionStart { experiment: experiment.clone() })),
        };
        let core = SessionCore::from_start(&start)?;
        Ok(Self { core, events: vec![start], trail: None })
    }

    /// Rebuild a session from its log.
    pub fn replay(events: &[SessionEvent]) -> Result<Self, ReplayError> {
        let first = events.first().ok_or(ReplayError::Empty)?;
        let corrupt = |e: ApplyError| ReplayError::CorruptLog { seq: e.seq, reason: e.reason };
        let mut core = SessionCore::from_start(first).map_err(corrupt)?;
        for ev in &events[1..] {
            core.apply(ev).map_err(corrupt)?;
        }
        Ok(Self { core, events: events.to_vec(), trail: None })
    }

    /// Parse and replay an NDJSON log. Blank lines are ignored.
    pub fn replay_ndjson(text: &str) -> Result<Self, ReplayError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ev: SessionEvent = serde_json::from_str(line)
                .map_err(|e| ReplayError::CorruptLog { seq: events.len() as u64, reason: format!("line {}: {e}", i + 1) })?;
            events.push(ev);
        }
        Self::replay(&events)
    }

    /// Record the digest after every appended event (for determinism checks).
    pub fn record_digests(&mut self) {
        self.trail = Some(vec![self.digest()]);
    }

    pub fn digest_trail(&self) -> Option<&[u64]> {
        self.trail.as_deref()
    }

    pub fn id(&self) -> &SessionId {
        &self.core.session_id
    }

    pub fn experiment(&self) -> &Arc<Experiment> {
        &self.core.experiment
    }

    pub fn tasks(&self) -> &[WizardTask] {
        &self.core.tasks
    }

    pub fn state(&self) -> SessionState {
        self.core.state
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.core.history
    }

    pub fn notes(&self) -> &[NoteEntry] {
        &self.core.notes
    }

    pub fn turn(&self) -> Option<&Turn> {
        self.core.turn.as_ref()
    }

    pub fn pending(&self) -> Option<&PendingItem> {
        self.core.turn.as_ref().and_then(|t| t.pending.as_ref())
    }

    pub fn active_stage(&self) -> Option<&StageId> {
        self.core.active_stage.as_ref()
    }

    /// 64-bit digest of the canonical JSON of the session state.
    pub fn digest(&self) -> u64 {
        let c = &self.core;
        let view = DigestView {
            session_id: &c.session_id,
            experiment_id: c.experiment.id.as_str(),
            experiment_revision: c.experiment.revision,
            state: c.state,
            next_seq: c.next_seq,
            last_ts: c.last_ts,
            turn: &c.turn,
            history: &c.history,
            notes: &c.notes,
            active_stage: &c.active_stage,
            filters: &c.filters,
            end_reason: &c.end_reason,
        };
        digest64(&view).expect("state always serializes")
    }

    fn record(&mut self, actor: Actor, body: EventBody, now: Timestamp) -> Result<&SessionEvent, SessionError> {
        let ev = SessionEvent {
            seq: self.core.next_seq,
            ts: now.max(self.core.last_ts),
            session_id: self.core.session_id.clone(),
            actor,
            body,
        };
        self.core.apply(&ev)?;
        self.events.push(ev);
        let digest = self.trail.is_some().then(|| self.digest());
        if let (Some(trail), Some(d)) = (self.trail.as_mut(), digest) {
            trail.push(d);
        }
        Ok(self.events.last().expect("just pushed"))
    }

    fn ensure_live(&self) -> Result<(), SessionError> {
        if self.core.state == SessionState::Ended {
            return Err(SessionError::Ended);
        }
        Ok(())
    }

    /// Mark the participant ready. Returns false when already ready.
    pub fn participant_ready(&mut self, now: Timestamp) -> Result<bool, SessionError> {
        self.ensure_live()?;
        if self.core.state != SessionState::Created {
            return Ok(false);
        }
        self.record(Actor::Participant, EventBody::ParticipantReady(ParticipantReady {}), now)?;
        Ok(true)
    }

    /// Accept a participant utterance and route it.
    pub fn participant_input(
        &mut self,
        input: Payload,
        language: Option<LanguageTag>,
        now: Timestamp,
    ) -> Result<Option<Invocation>, SessionError> {
        self.ensure_live()?;
        if self.core.state == SessionState::Created {
            return Err(SessionError::NotReady);
        }
        if self.core.turn.is_some() {
            return Err(SessionError::TurnInFlight);
        }
        let pipeline = &self.core.experiment.pipeline;
        let input_slot = if pipeline.mode(SlotKind::Asr).is_active() { SlotKind::Asr } else { SlotKind::TextIn };
        if input_slot == SlotKind::TextIn && matches!(input, Payload::Audio(_)) {
            return Err(SessionError::BadInput("this pipeline takes text input".into()));
        }
        if let Payload::Text(t) = &input {
            if t.trim().is_empty() {
                return Err(SessionError::BadInput("empty input".into()));
            }
        }
        let language = language.or_else(|| pipeline.slot(input_slot).settings.language.clone());
        self.record(Actor::Participant, EventBody::ParticipantInput(ParticipantInput { input, language }), now)?;
        self.advance(now)
    }

    /// Apply a wizard action to the pending item, or start a
    /// wizard-initiated output when no turn is open.
    pub fn wizard_action(&mut self, action: WizardAction, now: Timestamp) -> Result<Option<Invocation>, SessionError> {
        self.ensure_live()?;
        if self.core.state == SessionState::Created {
            return Err(SessionError::NotReady);
        }
        if let WizardAction::FreeText { text } = &action {
            if !self.core.experiment.chat_enabled {
                return Err(SessionError::IllegalAction("free text is disabled for this experiment".into()));
            }
            if text.trim().is_empty() {
                return Err(SessionError::IllegalAction("free text is empty".into()));
            }
        }
        let (turn, resolved) = match &self.core.turn {
            Some(t) => {
                let Some(pending) = &t.pending else {
                    return Err(SessionError::TurnInFlight);
                };
                check_action(pending, &action).map_err(SessionError::IllegalAction)?;
                (Some(t.anchor), self.resolve(&action, Some(pending), &t.value)?)
            }
            None => {
                if !action.is_response() {
                    return Err(SessionError::IllegalAction("nothing is pending".into()));
                }
                (None, self.resolve(&action, None, &TurnValue::default())?)
            }
        };
        self.record(Actor::Wizard, EventBody::WizardAction(WizardActionEvent { action, turn, resolved }), now)?;
        self.advance(now)
    }

    /// The value a wizard action produces.
    fn resolve(
        &self,
        action: &WizardAction,
        pending: Option<&PendingItem>,
        current: &TurnValue,
    ) -> Result<TurnValue, SessionError> {
        let exp = &self.core.experiment;
        // Slot whose output the wizard stands in for.
        let last_slot: &ComponentSlot = match pending {
            Some(p) => self.core.slot(p.span[p.span.len() - 1]),
            None => &exp.pipeline.slots()[self.core.initiative_entry() - 1],
        };
        match action {
            WizardAction::SelectUtterance { utterance_id, bindings } => {
                let utt = exp
                    .utterance(utterance_id)
                    .ok_or_else(|| SessionError::NotFound { kind: "utterance", id: utterance_id.to_string() })?;
                let text = render_template(&utt.text, bindings).map_err(|e| match e {
                    ModelError::MissingBinding(name) => SessionError::MissingBinding(name),
                    other => SessionError::IllegalAction(other.to_string()),
                })?;
                // Rendered templates no longer match stored translations.
                let utterance_id = (text == utt.text).then(|| utt.id.clone());
                Ok(TurnValue { text: Some(text), audio: None, language: Some(utt.language.clone()), utterance_id })
            }
            WizardAction::FreeText { text } => Ok(TurnValue {
                text: Some(text.clone()),
                audio: None,
                language: output_language(last_slot, current),
                utterance_id: None,
            }),
            WizardAction::PickCandidate { index } => {
                let c = &pending.and_then(|p| p.candidates.as_ref()).expect("checked by check_action")[*index];
                Ok(feed_value(last_slot, current, &c.payload, false))
            }
            WizardAction::SubmitCorrection { text } => {
                if last_slot.kind == SlotKind::Tts {
                    return Err(SessionError::IllegalAction("speech output cannot be edited as text".into()));
                }
                Ok(feed_value(last_slot, current, &Payload::text(text.clone()), false))
            }
            WizardAction::Approve => {
                let p = pending.expect("approve needs a pending item");
                let payload = match (&p.editable_text, &p.candidates) {
                    (Some(text), _) => Payload::text(text.clone()),
                    (None, Some(c)) if !c.is_empty() => c[0].payload.clone(),
                    _ => return Err(SessionError::IllegalAction("nothing to approve".into())),
                };
                Ok(feed_value(last_slot, current, &payload, false))
            }
        }
    }

    /// Record that the participant displayed or finished playing an output.
    /// Repeated acks of the same kind are ignored.
    pub fn delivery_ack(&mut self, output_seq: u64, kind: AckKind, now: Timestamp) -> Result<bool, SessionError> {
        self.ensure_live()?;
        let entry = self
            .core
            .history
            .iter()
            .find(|h| h.seq == output_seq)
            .ok_or_else(|| SessionError::NotFound { kind: "output", id: output_seq.to_string() })?;
        if entry.acks.iter().any(|a| a.kind == kind) {
            return Ok(false);
        }
        self.record(Actor::Participant, EventBody::DeliveryAck(DeliveryAck { output_seq, kind }), now)?;
        Ok(true)
    }

    pub fn note(&mut self, text: &str, now: Timestamp) -> Result<u64, SessionError> {
        self.ensure_live()?;
        if text.trim().is_empty() {
            return Err(SessionError::BadInput("empty note".into()));
        }
        Ok(self.record(Actor::Wizard, EventBody::Note(Note { text: text.to_string() }), now)?.seq)
    }

    pub fn filter_change(&mut self, attribute: &str, values: Vec<Scalar>, now: Timestamp) -> Result<(), SessionError> {
        self.ensure_live()?;
        if attribute.trim().is_empty() {
            return Err(SessionError::BadInput("empty attribute".into()));
        }
        let body = EventBody::FilterChange(FilterChange { attribute: attribute.to_string(), values });
        self.record(Actor::Wizard, body, now)?;
        Ok(())
    }

    pub fn stage_switch(&mut self, stage_id: &StageId, now: Timestamp) -> Result<(), SessionError> {
        self.ensure_live()?;
        if self.core.experiment.stage(stage_id).is_none() {
            return Err(SessionError::NotFound { kind: "stage", id: stage_id.to_string() });
        }
        self.record(Actor::Wizard, EventBody::StageSwitch(StageSwitch { stage_id: stage_id.clone() }), now)?;
        Ok(())
    }

    /// End the session. Returns false when it had already ended.
    pub fn end(&mut self, reason: &str, actor: Actor, now: Timestamp) -> Result<bool, SessionError> {
        if self.core.state == SessionState::Ended {
            return Ok(false);
        }
        self.record(actor, EventBody::SessionEnd(SessionEnd { reason: reason.to_string() }), now)?;
        Ok(true)
    }

    /// Log an error that does not affect routing (e.g. a failed delivery).
    pub fn log_error(&mut self, message: &str, now: Timestamp) -> Result<(), SessionError> {
        self.ensure_live()?;
        let body = EventBody::Error(ErrorEvent { message: message.to_string(), slot: None, turn: None, turn_aborted: false });
        self.record(Actor::System, body, now)?;
        Ok(())
    }

    /// The component call the open turn is blocked on, if any. Used to
    /// resume after a restart.
    pub fn pending_invocation(&self) -> Option<Invocation> {
        match self.next_step() {
            Step::Invoke(inv) => Some(inv),
            _ => None,
        }
    }

    /// Feed back the result of `invocation` and keep routing.
    pub fn complete_invocation(
        &mut self,
        invocation: &Invocation,
        result: Result<ComponentResult, AdapterError>,
        now: Timestamp,
    ) -> Result<Option<Invocation>, SessionError> {
        self.ensure_live()?;
        match self.pending_invocation() {
            Some(current) if current.ticket() == invocation.ticket() => {}
            _ => return Err(SessionError::StaleInvocation),
        }
        let body = match result {
            Ok(res) => {
                let (candidates, degraded) = degrade_candidates(res.candidates, invocation.profile.as_ref());
                EventBody::ComponentOutput(ComponentOutput {
                    turn: invocation.turn,
                    slot: invocation.slot,
                    adapter_id: res.adapter_id,
                    candidates,
                    latency_ms: res.latency_ms,
                    delay_ms: invocation.delay_ms,
                    prepared: false,
                    degraded,
                })
            }
            Err(e) => EventBody::Error(ErrorEvent {
                message: e.to_string(),
                slot: Some(invocation.slot),
                turn: Some(invocation.turn),
                turn_aborted: true,
            }),
        };
        self.record(Actor::Component(invocation.slot), body, now)?;
        self.advance(now)
    }

    /// Route the open turn until it needs the wizard, a component, or is done.
    fn advance(&mut self, now: Timestamp) -> Result<Option<Invocation>, SessionError> {
        for _ in 0..MAX_ROUTING_STEPS {
            match self.next_step() {
                Step::Idle => return Ok(None),
                Step::Invoke(inv) => return Ok(Some(inv)),
                Step::Record(actor, body) => {
                    self.record(actor, body, now)?;
                }
            }
        }
        Err(SessionError::IllegalAction("routing did not settle".into()))
    }

    fn next_step(&self) -> Step {
        let core = &self.core;
        let Some(turn) = &core.turn else { return Step::Idle };
        if turn.pending.is_some() || core.state == SessionState::Ended {
            return Step::Idle;
        }
        for slot in &core.experiment.pipeline.slots()[turn.cursor.min(SlotKind::ALL.len())..] {
            if !slot.mode.is_active() {
                continue;
            }
            if let Some(task) = core.task_at(slot.kind) {
                if slot.mode == ComponentMode::Correcting && !slot.kind.is_plain_io() && turn.staged.is_none() {
                    return self.invoke_step(turn, slot, true);
                }
                return Step::Record(Actor::System, EventBody::WizardShown(self.shown(turn, task, slot)));
            }
            if slot.kind.is_plain_io() {
                continue;
            }
            if let Some(candidates) = self.prepared(turn, slot) {
                let body = EventBody::ComponentOutput(ComponentOutput {
                    turn: turn.anchor,
                    slot: slot.kind,
                    adapter_id: "prepared".into(),
                    candidates,
                    latency_ms: 0,
                    delay_ms: 0,
                    prepared: true,
                    degraded: false,
                });
                return Step::Record(Actor::Component(slot.kind), body);
            }
            return self.invoke_step(turn, slot, false);
        }
        let v = &turn.value;
        Step::Record(
            Actor::System,
            EventBody::SystemOutput(SystemOutput {
                text: v.text.clone().unwrap_or_default(),
                language: v.language.clone(),
                audio: v.audio.clone(),
                origin_seq: turn.origin_seq,
                action_seq: turn.action_seq,
                utterance_id: v.utterance_id.clone(),
            }),
        )
    }

    fn shown(&self, turn: &Turn, task: usize, slot: &ComponentSlot) -> WizardShown {
        let t = &self.core.tasks[task];
        let mut shown = WizardShown {
            turn: turn.anchor,
            task,
            span: t.span.clone(),
            context: Some(turn.value.clone()),
            candidates: None,
            editable_text: None,
        };
        match &turn.staged {
            Some(st) if slot.settings.nbest => shown.candidates = Some(st.candidates.clone()),
            Some(st) => match &st.candidates[0].payload {
                Payload::Text(text) => shown.editable_text = Some(text.clone()),
                Payload::Audio(_) => shown.candidates = Some(st.candidates[..1].to_vec()),
            },
            None if t.kind == TaskKind::Correct => shown.editable_text = turn.value.text.clone(),
            None => {}
        }
        shown
    }

    /// Stored translation or recording standing in for an automatic slot.
    fn prepared(&self, turn: &Turn, slot: &ComponentSlot) -> Option<Vec<Candidate>> {
        let utt = self.core.experiment.utterance(turn.value.utterance_id.as_ref()?)?;
        match slot.kind {
            SlotKind::OutputMt => {
                let target = slot.settings.target_language.as_ref()?;
                let text = lookup_prepared(utt, target)?.text?;
                Some(vec![Candidate::new(Payload::Text(text), 1.0)])
            }
            SlotKind::Tts => {
                let lang = slot.settings.language.clone().or_else(|| turn.value.language.clone())?;
                let audio = lookup_prepared(utt, &lang)?.audio?;
                Some(vec![Candidate::new(Payload::Audio(audio), 1.0)])
            }
            _ => None,
        }
    }

    fn invoke_step(&self, turn: &Turn, slot: &ComponentSlot, correcting: bool) -> Step {
        let abort = |message: String| {
            Step::Record(
                Actor::System,
                EventBody::Error(ErrorEvent { message, slot: Some(slot.kind), turn: Some(turn.anchor), turn_aborted: true }),
            )
        };
        let s = &slot.settings;
        let Some(adapter_id) = s.adapter.clone() else {
            return abort(format!("no adapter configured for {}", slot.kind.label()));
        };
        let v = &turn.value;
        let payload = match slot.kind {
            SlotKind::Asr => v.audio.clone().map(Payload::Audio).or_else(|| v.text.clone().map(Payload::Text)),
            _ => v.text.clone().map(Payload::Text),
        };
        let Some(payload) = payload else {
            return abort(format!("no input for {}", slot.kind.label()));
        };
        let (source, target) = match slot.kind {
            SlotKind::InputMt | SlotKind::OutputMt => (s.source_language.clone(), s.target_language.clone()),
            SlotKind::Tts => (None, s.language.clone().or_else(|| v.language.clone())),
            _ => (v.language.clone().or_else(|| s.language.clone()), None),
        };
        let mut request = ComponentRequest::new(slot.kind, payload).languages(source, target);
        if correcting && s.nbest {
            request = request.nbest(s.nbest_size());
        }
        let profile = s.degradation.as_ref().map(|p| p.salted(turn.anchor.wrapping_mul(8) + slot.kind.index() as u64));
        let delay_ms = profile.as_ref().map_or(0, |p| degrade_delay(p, &mut ChaCha8Rng::seed_from_u64(p.seed)));
        Step::Invoke(Invocation {
            session_id: self.core.session_id.clone(),
            turn: turn.anchor,
            slot: slot.kind,
            adapter_id,
            request,
            timeout_ms: s.timeout_ms(),
            delay_ms,
            profile,
        })
    }
}

/// Apply text degradation; the rng stream continues after the delay draw
/// made when the invocation was issued.
fn degrade_candidates(mut candidates: Vec<Candidate>, profile: Option<&DegradationProfile>) -> (Vec<Candidate>, bool) {
    let Some(p) = profile.filter(|p| p.alters_text()) else {
        return (candidates, false);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    degrade_delay(p, &mut rng);
    for c in &mut candidates {
        if let Payload::Text(t) = &c.payload {
            c.payload = Payload::Text(degrade_text_with(t, p, &mut rng).text);
        }
    }
    (candidates, true)
}
