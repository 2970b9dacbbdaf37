//! Channel message envelope, role gate and role-filtered projections.
//!
//! Every frame is a JSON text frame:
//! `{"session_id":…, "seq":…, "client_ts":…, "role":…, "type":…, "payload":{…}}`.
//! Clients never set `seq`; the server sets it on messages that mirror a
//! logged event. `schema/messages.json` at the repository root describes
//! the same shapes for the browser clients.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use ozwoz_core::adapters::Payload;
use ozwoz_core::model::Scalar;
use ozwoz_core::session::{AckKind, EventBody, ParticipantOutput, SessionError, SessionEvent, WizardAction};
use ozwoz_core::{LanguageTag, SessionId, StageId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Participant,
    Wizard,
}

/// Inbound message types.
pub const CLIENT_TYPES: [&str; 9] = [
    "hello",
    "participant_input",
    "delivery_ack",
    "state_sync",
    "wizard_action",
    "note",
    "filter_change",
    "stage_switch",
    "end_session",
];

/// Server-originated message types that do not mirror a log event.
pub const CONTROL_TYPES: [&str; 3] = ["state_sync", "busy", "protocol_error"];

impl Role {
    pub fn may_send(self, kind: &str) -> bool {
        match self {
            Role::Participant => matches!(kind, "hello" | "participant_input" | "delivery_ack" | "state_sync"),
            Role::Wizard => matches!(
                kind,
                "hello" | "wizard_action" | "note" | "filter_change" | "stage_switch" | "state_sync" | "end_session"
            ),
        }
    }
}

/// A validated client command.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientRequest {
    Hello,
    StateSync,
    ParticipantInput { input: Payload, language: Option<LanguageTag> },
    DeliveryAck { output_seq: u64, kind: AckKind },
    WizardAction(WizardAction),
    Note { text: String },
    FilterChange { attribute: String, values: Vec<Scalar> },
    StageSwitch { stage_id: StageId },
    EndSession { reason: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ProtocolError {
    pub code: &'static str,
    pub message: String,
}

impl ProtocolError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    #[serde(default)]
    session_id: Option<SessionId>,
    #[serde(default)]
    seq: Option<Value>,
    #[serde(default)]
    client_ts: Option<i64>,
    #[serde(default)]
    role: Option<Role>,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    payload: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InputPayload {
    input: Payload,
    #[serde(default)]
    language: Option<LanguageTag>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AckPayload {
    output_seq: u64,
    kind: AckKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NotePayload {
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterPayload {
    attribute: String,
    values: Vec<Scalar>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StagePayload {
    stage_id: StageId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndPayload {
    #[serde(default)]
    reason: Option<String>,
}

fn payload<T: serde::de::DeserializeOwned>(kind: &str, value: Value) -> Result<T, ProtocolError> {
    // Absent payloads count as empty objects.
    let value = if value.is_null() { Value::Object(Map::new()) } else { value };
    serde_json::from_value(value).map_err(|e| ProtocolError::new("bad_payload", format!("{kind}: {e}")))
}

/// Parse and gate one text frame from a connection authenticated as `role`
/// on `session`.
pub fn parse_client_message(text: &str, role: Role, session: &SessionId) -> Result<ClientRequest, ProtocolError> {
    let env: Envelope =
        serde_json::from_str(text).map_err(|e| ProtocolError::new("bad_envelope", e.to_string()))?;
    if env.seq.is_some() {
        return Err(ProtocolError::new("bad_envelope", "seq is assigned by the server"));
    }
    if env.session_id.as_ref().is_some_and(|s| s != session) {
        return Err(ProtocolError::new("wrong_session", "session_id does not match the channel"));
    }
    if env.role.is_some_and(|r| r != role) {
        return Err(ProtocolError::new("forbidden", "role does not match the channel token"));
    }
    // Client clocks are untrusted; the field is accepted and ignored.
    let _ = env.client_ts;
    let kind = env.kind.as_str();
    if !CLIENT_TYPES.contains(&kind) {
        return Err(ProtocolError::new("unknown_type", format!("unknown message type {kind:?}")));
    }
    if !role.may_send(kind) {
        return Err(ProtocolError::new("forbidden", format!("{kind} is not permitted for this role")));
    }
    let p = env.payload;
    Ok(match kind {
        "hello" => payload::<Empty>(kind, p).map(|_| ClientRequest::Hello)?,
        "state_sync" => payload::<Empty>(kind, p).map(|_| ClientRequest::StateSync)?,
        "participant_input" => {
            let InputPayload { input, language } = payload(kind, p)?;
            if language.as_ref().is_some_and(|l| !l.is_valid()) {
                return Err(ProtocolError::new("bad_payload", "invalid language tag"));
            }
            ClientRequest::ParticipantInput { input, language }
        }
        "delivery_ack" => {
            let AckPayload { output_seq, kind } = payload(kind, p)?;
            ClientRequest::DeliveryAck { output_seq, kind }
        }
        "wizard_action" => ClientRequest::WizardAction(payload(kind, p)?),
        "note" => ClientRequest::Note { text: payload::<NotePayload>(kind, p)?.text },
        "filter_change" => {
            let FilterPayload { attribute, values } = payload(kind, p)?;
            ClientRequest::FilterChange { attribute, values }
        }
        "stage_switch" => ClientRequest::StageSwitch { stage_id: payload::<StagePayload>(kind, p)?.stage_id },
        "end_session" => ClientRequest::EndSession { reason: payload::<EndPayload>(kind, p)?.reason },
        _ => unreachable!("checked against CLIENT_TYPES"),
    })
}

/// Outbound envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub session_id: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub server_ts: Timestamp,
    /// The recipient's role.
    pub role: Role,
    #[serde(rename = "type")]
    pub kind: String,
    /// Event origin; only on wizard-bound event messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<Value>,
    pub payload: Value,
}

impl ServerMessage {
    pub fn control(session_id: &SessionId, role: Role, kind: &str, payload: Value) -> Self {
        Self {
            session_id: session_id.clone(),
            seq: None,
            server_ts: Timestamp::now(),
            role,
            kind: kind.to_string(),
            actor: None,
            payload,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }
}

/// The message, if any, that `role` receives for a logged event.
///
/// The wizard sees every event in full. The participant sees only what was
/// delivered to them and the end of the session; it never learns who or
/// what produced an output.
pub fn event_message(event: &SessionEvent, role: Role) -> Option<ServerMessage> {
    let msg = |payload: Value, actor: Option<Value>| ServerMessage {
        session_id: event.session_id.clone(),
        seq: Some(event.seq),
        server_ts: event.ts,
        role,
        kind: event.body.event_type().as_str().to_string(),
        actor,
        payload,
    };
    match role {
        Role::Wizard => {
            let mut full = serde_json::to_value(event).expect("events always serialize");
            let payload = full["payload"].take();
            let actor = full["actor"].take();
            Some(msg(payload, Some(actor)))
        }
        Role::Participant => match &event.body {
            EventBody::SystemOutput(out) => {
                let view = ParticipantOutput {
                    seq: event.seq,
                    text: out.text.clone(),
                    audio: out.audio.clone(),
                    language: out.language.clone(),
                };
                Some(msg(serde_json::to_value(view).expect("serializable"), None))
            }
            EventBody::SessionEnd(_) => Some(msg(json!({}), None)),
            _ => None,
        },
    }
}

/// Reply to a rejected command.
pub fn rejection(session_id: &SessionId, role: Role, err: &SessionError) -> ServerMessage {
    match err {
        SessionError::TurnInFlight => {
            ServerMessage::control(session_id, role, "busy", json!({ "message": err.to_string() }))
        }
        _ => ServerMessage::control(
            session_id,
            role,
            "protocol_error",
            json!({ "code": error_code(err), "message": err.to_string() }),
        ),
    }
}

pub fn protocol_error(session_id: &SessionId, role: Role, err: &ProtocolError) -> ServerMessage {
    ServerMessage::control(session_id, role, "protocol_error", json!({ "code": err.code, "message": err.message }))
}

fn error_code(err: &SessionError) -> &'static str {
    match err {
        SessionError::InvalidExperiment(_) | SessionError::InvalidPipeline(_) => "invalid_config",
        SessionError::NotReady => "not_ready",
        SessionError::Ended => "ended",
        SessionError::TurnInFlight => "busy",
        SessionError::IllegalAction(_) => "illegal_action",
        SessionError::MissingBinding(_) => "missing_binding",
        SessionError::NotFound { .. } => "not_found",
        SessionError::BadInput(_) => "bad_input",
        SessionError::StaleInvocation | SessionError::Internal(_) => "internal",
    }
}

/// Keys that must never appear in anything sent to a participant: they
/// would reveal the utterance inventory, the pipeline, the wizard or notes.
pub const WIZARD_ONLY_KEYS: &[&str] = &[
    "actor",
    "action",
    "action_seq",
    "adapter_id",
    "bindings",
    "candidates",
    "context",
    "degraded",
    "editable_text",
    "experiment",
    "filters",
    "frequently_used",
    "notes",
    "origin_seq",
    "pending",
    "pipeline",
    "prepared",
    "records",
    "span",
    "stages",
    "task",
    "tasks",
    "turn",
    "utterance_id",
    "utterances",
    "via",
    "wizard",
];

/// First wizard-only key found anywhere in `value`.
pub fn wizard_only_key(value: &Value) -> Option<String> {
    match value {
        Value::Object(map) => map.iter().find_map(|(k, v)| {
            if WIZARD_ONLY_KEYS.contains(&k.as_str()) {
                Some(k.clone())
            } else {
                wizard_only_key(v)
            }
        }),
        Value::Array(items) => items.iter().find_map(wizard_only_key),
        _ => None,
    }
}
