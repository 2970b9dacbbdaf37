//! Session log entries and their per-type payload schemas.
//!
//! On the wire and on disk an event is one JSON object:
//! `{"seq":3,"ts":1700000000000,"session_id":"…","actor":"wizard","type":"wizard_action","payload":{…}}`.
//! Payloads are parsed strictly per `type`; unknown fields are rejected.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapters::{Candidate, Payload};
use crate::ids::{AssetRef, LanguageTag, SessionId, StageId, Timestamp, UtteranceId};
use crate::model::{Experiment, Scalar};
use crate::pipeline::SlotKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Participant,
    Wizard,
    System,
    Component(SlotKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    SessionStart,
    ParticipantReady,
    ParticipantInput,
    ComponentOutput,
    WizardShown,
    WizardAction,
    SystemOutput,
    DeliveryAck,
    Note,
    FilterChange,
    StageSwitch,
    Error,
    SessionEnd,
}

impl EventType {
    pub const ALL: [EventType; 13] = [
        EventType::SessionStart,
        EventType::ParticipantReady,
        EventType::ParticipantInput,
        EventType::ComponentOutput,
        EventType::WizardShown,
        EventType::WizardAction,
        EventType::SystemOutput,
        EventType::DeliveryAck,
        EventType::Note,
        EventType::FilterChange,
        EventType::StageSwitch,
        EventType::Error,
        EventType::SessionEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::SessionStart => "session_start",
            EventType::ParticipantReady => "participant_ready",
            EventType::ParticipantInput => "participant_input",
            EventType::ComponentOutput => "component_output",
            EventType::WizardShown => "wizard_shown",
            EventType::WizardAction => "wizard_action",
            EventType::SystemOutput => "system_output",
            EventType::DeliveryAck => "delivery_ack",
            EventType::Note => "note",
            EventType::FilterChange => "filter_change",
            EventType::StageSwitch => "stage_switch",
            EventType::Error => "error",
            EventType::SessionEnd => "session_end",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Text and/or audio travelling down the pipeline within one turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnValue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AssetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageTag>,
    /// Set while the value is still an authored utterance, so prepared
    /// translations and recordings can stand in for live components.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<UtteranceId>,
}

impl TurnValue {
    pub fn from_payload(payload: &Payload, language: Option<LanguageTag>) -> Self {
        match payload {
            Payload::Text(t) => TurnValue { text: Some(t.clone()), language, ..Default::default() },
            Payload::Audio(a) => TurnValue { audio: Some(a.clone()), language, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WizardAction {
    SelectUtterance {
        utterance_id: UtteranceId,
        #[serde(default)]
        bindings: BTreeMap<String, String>,
    },
    FreeText {
        text: String,
    },
    PickCandidate {
        index: usize,
    },
    SubmitCorrection {
        text: String,
    },
    Approve,
}

impl WizardAction {
    pub fn select(utterance_id: &UtteranceId) -> Self {
        WizardAction::SelectUtterance { utterance_id: utterance_id.clone(), bindings: BTreeMap::new() }
    }

    pub fn select_with(utterance_id: &UtteranceId, bindings: &[(&str, &str)]) -> Self {
        WizardAction::SelectUtterance {
            utterance_id: utterance_id.clone(),
            bindings: bindings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Actions that produce a response (as opposed to fixing component output).
    pub fn is_response(&self) -> bool {
        matches!(self, WizardAction::SelectUtterance { .. } | WizardAction::FreeText { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckKind {
    Displayed,
    PlaybackFinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionStart {
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantReady {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantInput {
    pub input: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentOutput {
    /// Seq of the event that opened the turn.
    pub turn: u64,
    pub slot: SlotKind,
    pub adapter_id: String,
    pub candidates: Vec<Candidate>,
    pub latency_ms: u64,
    #[serde(default)]
    pub delay_ms: u64,
    /// Served from a stored translation/recording instead of a live component.
    #[serde(default)]
    pub prepared: bool,
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WizardShown {
    pub turn: u64,
    /// Index into the session's wizard tasks.
    pub task: usize,
    pub span: Vec<SlotKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<TurnValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Candidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editable_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WizardActionEvent {
    pub action: WizardAction,
    /// Turn being resolved; `None` for a wizard-initiated output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<u64>,
    pub resolved: TurnValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOutput {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AssetRef>,
    /// The participant input this answers; `None` when wizard-initiated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<UtteranceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliveryAck {
    pub output_seq: u64,
    pub kind: AckKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Note {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterChange {
    pub attribute: String,
    #[serde(default)]
    pub values: Vec<Scalar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSwitch {
    pub stage_id: StageId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorEvent {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<SlotKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<u64>,
    #[serde(default)]
    pub turn_aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEnd {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventBody {
    SessionStart(Box<SessionStart>),
    ParticipantReady(ParticipantReady),
    ParticipantInput(ParticipantInput),
    ComponentOutput(ComponentOutput),
    WizardShown(WizardShown),
    WizardAction(WizardActionEvent),
    SystemOutput(SystemOutput),
    DeliveryAck(DeliveryAck),
    Note(Note),
    FilterChange(FilterChange),
    StageSwitch(StageSwitch),
    Error(ErrorEvent),
    SessionEnd(SessionEnd),
}

impl EventBody {
    pub fn event_type(&self) -> EventType {
        match self {
            EventBody::SessionStart(_) => EventType::SessionStart,
            EventBody::ParticipantReady(_) => EventType::ParticipantReady,
            EventBody::ParticipantInput(_) => EventType::ParticipantInput,
            EventBody::ComponentOutput(_) => EventType::ComponentOutput,
            EventBody::WizardShown(_) => EventType::WizardShown,
            EventBody::WizardAction(_) => EventType::WizardAction,
            EventBody::SystemOutput(_) => EventType::SystemOutput,
            EventBody::DeliveryAck(_) => EventType::DeliveryAck,
            EventBody::Note(_) => EventType::Note,
            EventBody::FilterChange(_) => EventType::FilterChange,
            EventBody::StageSwitch(_) => EventType::StageSwitch,
            EventBody::Error(_) => EventType::Error,
            EventBody::SessionEnd(_) => EventType::SessionEnd,
        }
    }

    fn payload_value(&self) -> serde_json::Result<Value> {
        match self {
            EventBody::SessionStart(p) => serde_json::to_value(p),
            EventBody::ParticipantReady(p) => serde_json::to_value(p),
            EventBody::ParticipantInput(p) => serde_json::to_value(p),
            EventBody::ComponentOutput(p) => serde_json::to_value(p),
            EventBody::WizardShown(p) => serde_json::to_value(p),
            EventBody::WizardAction(p) => serde_json::to_value(p),
            EventBody::SystemOutput(p) => serde_json::to_value(p),
            EventBody::DeliveryAck(p) => serde_json::to_value(p),
            EventBody::Note(p) => serde_json::to_value(p),
            EventBody::FilterChange(p) => serde_json::to_value(p),
            EventBody::StageSwitch(p) => serde_json::to_value(p),
            EventBody::Error(p) => serde_json::to_value(p),
            EventBody::SessionEnd(p) => serde_json::to_value(p),
        }
    }

    /// Parse `payload` with the schema of `event_type`.
    pub fn from_parts(event_type: EventType, payload: Value) -> serde_json::Result<Self> {
        use serde_json::from_value as parse;
        Ok(match event_type {
            EventType::SessionStart => EventBody::SessionStart(Box::new(parse(payload)?)),
            EventType::ParticipantReady => EventBody::ParticipantReady(parse(payload)?),
            EventType::ParticipantInput => EventBody::ParticipantInput(parse(payload)?),
            EventType::ComponentOutput => EventBody::ComponentOutput(parse(payload)?),
            EventType::WizardShown => EventBody::WizardShown(parse(payload)?),
            EventType::WizardAction => EventBody::WizardAction(parse(payload)?),
            EventType::SystemOutput => EventBody::SystemOutput(parse(payload)?),
            EventType::DeliveryAck => EventBody::DeliveryAck(parse(payload)?),
            EventType::Note => EventBody::Note(parse(payload)?),
            EventType::FilterChange => EventBody::FilterChange(parse(payload)?),
            EventType::StageSwitch => EventBody::StageSwitch(parse(payload)?),
            EventType::Error => EventBody::Error(parse(payload)?),
            EventType::SessionEnd => EventBody::SessionEnd(parse(payload)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent", into = "RawEvent")]
pub struct SessionEvent {
    pub seq: u64,
    pub ts: Timestamp,
    pub session_id: SessionId,
    pub actor: Actor,
    pub body: EventBody,
}

impl SessionEvent {
    pub fn event_type(&self) -> EventType {
        self.body.event_type()
    }

    /// One NDJSON line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    seq: u64,
    ts: Timestamp,
    session_id: SessionId,
    actor: Actor,
    #[serde(rename = "type")]
    event_type: EventType,
    #[serde(default)]
    payload: Value,
}

impl TryFrom<RawEvent> for SessionEvent {
    type Error = String;

    fn try_from(raw: RawEvent) -> Result<Self, Self::Error> {
        let payload = if raw.payload.is_null() { Value::Object(Default::default()) } else { raw.payload };
        let body = EventBody::from_parts(raw.event_type, payload)
            .map_err(|e| format!("{} payload: {e}", raw.event_type))?;
        Ok(SessionEvent { seq: raw.seq, ts: raw.ts, session_id: raw.session_id, actor: raw.actor, body })
    }
}

impl From<SessionEvent> for RawEvent {
    fn from(ev: SessionEvent) -> Self {
        let payload = ev.body.payload_value().expect("payloads always serialize");
        RawEvent { seq: ev.seq, ts: ev.ts, session_id: ev.session_id, actor: ev.actor, event_type: ev.body.event_type(), payload }
    }
}
