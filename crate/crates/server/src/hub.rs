//! Per-session actors.
//!
//! Each live session is owned by one tokio task that drains an unbounded
//! inbox. Client commands, adapter results and timers all pass through it,
//! so session state is only ever touched by that task. New events are
//! written to the log before they are broadcast to connections.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use tokio::sync::{broadcast, mpsc, oneshot};

use ozwoz_core::adapters::{AdapterError, AdapterRegistry, ComponentResult};
use ozwoz_core::model::Experiment;
use ozwoz_core::session::{Actor, Invocation, Session, SessionError, SessionEvent, SessionState};
use ozwoz_core::{ExperimentId, SessionId, Timestamp};

use crate::protocol::{ClientRequest, Role};
use crate::store::{LogWriter, Store, StoreError, Tokens};

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub heartbeat: Duration,
    pub max_missed_pongs: u32,
    /// How long a disconnected participant may stay away before the
    /// session is ended.
    pub participant_grace: Duration,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self { heartbeat: Duration::from_secs(20), max_missed_pongs: 3, participant_grace: Duration::from_secs(60) }
    }
}

/// Outcome of a client command that the connection answers directly.
pub type CommandReply = Result<Option<Value>, SessionError>;

enum Command {
    Client { role: Role, request: ClientRequest, reply: oneshot::Sender<CommandReply> },
    Completed { invocation: Box<Invocation>, result: Box<Result<ComponentResult, AdapterError>> },
    Connected { role: Role },
    Disconnected { role: Role },
    GraceExpired { generation: u64 },
    Snapshot { reply: oneshot::Sender<SessionSnapshot> },
    Log { reply: oneshot::Sender<Vec<SessionEvent>> },
}

/// Summary served by `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SessionSnapshot {
    pub session_id: SessionId,
    pub experiment_id: ExperimentId,
    pub state: SessionState,
    /// Hex of the 64-bit state digest.
    pub digest: String,
    pub events: usize,
    pub turn_in_flight: bool,
    pub awaiting_wizard: bool,
}

/// Cheap handle on a running session actor.
#[derive(Clone)]
pub struct SessionHandle {
    id: SessionId,
    experiment_id: ExperimentId,
    tokens: Tokens,
    inbox: mpsc::UnboundedSender<Command>,
    events: broadcast::Sender<Arc<SessionEvent>>,
}

impl SessionHandle {
    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn experiment_id(&self) -> &ExperimentId {
        &self.experiment_id
    }

    pub fn tokens(&self) -> &Tokens {
        &self.tokens
    }

    pub fn role_for(&self, token: &str) -> Option<Role> {
        if token == self.tokens.wizard {
            Some(Role::Wizard)
        } else if token == self.tokens.participant {
            Some(Role::Participant)
        } else {
            None
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<SessionEvent>> {
        self.events.subscribe()
    }

    pub async fn command(&self, role: Role, request: ClientRequest) -> CommandReply {
        let (reply, rx) = oneshot::channel();
        self.send(Command::Client { role, request, reply });
        rx.await.unwrap_or(Err(SessionError::Ended))
    }

    pub async fn snapshot(&self) -> Option<SessionSnapshot> {
        let (reply, rx) = oneshot::channel();
        self.send(Command::Snapshot { reply });
        rx.await.ok()
    }

    pub async fn log(&self) -> Vec<SessionEvent> {
        let (reply, rx) = oneshot::channel();
        self.send(Command::Log { reply });
        rx.await.unwrap_or_default()
    }

    pub fn connected(&self, role: Role) {
        self.send(Command::Connected { role });
    }

    pub fn disconnected(&self, role: Role) {
        self.send(Command::Disconnected { role });
    }

    fn send(&self, cmd: Command) {
        // The actor never exits while a handle is registered.
        let _ = self.inbox.send(cmd);
    }
}

struct SessionActor {
    session: Session,
    log: LogWriter,
    persisted: usize,
    events: broadcast::Sender<Arc<SessionEvent>>,
    inbox: mpsc::UnboundedSender<Command>,
    registry: AdapterRegistry,
    config: HubConfig,
    participants: usize,
    grace_generation: u64,
}

impl SessionActor {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            self.handle(cmd);
            self.flush();
        }
    }

    fn handle(&mut self, cmd: Command) {
        let now = Timestamp::now();
        match cmd {
            Command::Client { role, request, reply } => {
                let result = self.client(role, request, now);
                let _ = reply.send(result);
            }
            Command::Completed { invocation, result } => {
                match self.session.complete_invocation(&invocation, *result, now) {
                    Ok(next) => self.dispatch(next),
                    // The session ended or moved on while the call ran.
                    Err(SessionError::StaleInvocation | SessionError::Ended) => {}
                    Err(e) => tracing::error!(session = %self.session.id(), "routing failed: {e}"),
                }
            }
            Command::Connected { role: Role::Participant } => {
                self.participants += 1;
                self.grace_generation += 1;
            }
            Command::Disconnected { role: Role::Participant } => {
                self.participants = self.participants.saturating_sub(1);
                if self.participants == 0 {
                    self.start_grace();
                }
            }
            Command::Connected { .. } | Command::Disconnected { .. } => {}
            Command::GraceExpired { generation } => {
                if generation == self.grace_generation && self.participants == 0 {
                    let _ = self.session.end("participant disconnected", Actor::System, now);
                }
            }
            Command::Snapshot { reply } => {
                let _ = reply.send(self.snapshot());
            }
            Command::Log { reply } => {
                let _ = reply.send(self.session.events().to_vec());
            }
        }
    }

    fn client(&mut self, role: Role, request: ClientRequest, now: Timestamp) -> CommandReply {
        let s = &mut self.session;
        let invocation = match request {
            ClientRequest::Hello => {
                if role == Role::Participant {
                    s.participant_ready(now)?;
                }
                return Ok(Some(self.view(role)));
            }
            ClientRequest::StateSync => return Ok(Some(self.view(role))),
            ClientRequest::ParticipantInput { input, language } => s.participant_input(input, language, now)?,
            ClientRequest::DeliveryAck { output_seq, kind } => {
                s.delivery_ack(output_seq, kind, now)?;
                None
            }
            ClientRequest::WizardAction(action) => s.wizard_action(action, now)?,
            ClientRequest::Note { text } => {
                s.note(&text, now)?;
                None
            }
            ClientRequest::FilterChange { attribute, values } => {
                s.filter_change(&attribute, values, now)?;
                None
            }
            ClientRequest::StageSwitch { stage_id } => {
                s.stage_switch(&stage_id, now)?;
                None
            }
            ClientRequest::EndSession { reason } => {
                s.end(reason.as_deref().unwrap_or("ended by wizard"), Actor::Wizard, now)?;
                None
            }
        };
        self.dispatch(invocation);
        Ok(None)
    }

    fn view(&self, role: Role) -> Value {
        match role {
            Role::Participant => serde_json::to_value(self.session.participant_view()),
            Role::Wizard => serde_json::to_value(self.session.wizard_view()),
        }
        .expect("views serialize")
    }

    fn snapshot(&self) -> SessionSnapshot {
        let s = &self.session;
        SessionSnapshot {
            session_id: s.id().clone(),
            experiment_id: s.experiment().id.clone(),
            state: s.state(),
            digest: format!("{:016x}", s.digest()),
            events: s.events().len(),
            turn_in_flight: s.turn().is_some(),
            awaiting_wizard: s.pending().is_some(),
        }
    }

    /// Run a component call off the queue; its result comes back as a
    /// command after the injected delay.
    fn dispatch(&self, invocation: Option<Invocation>) {
        let Some(inv) = invocation else { return };
        let registry = self.registry.clone();
        let inbox = self.inbox.clone();
        tokio::spawn(async move {
            let call = inv.clone();
            let result =
                tokio::task::spawn_blocking(move || registry.invoke(&call.adapter_id, &call.request, call.timeout_ms))
                    .await
                    .unwrap_or_else(|e| Err(AdapterError::Failed(format!("adapter task failed: {e}"))));
            if inv.delay_ms > 0 {
                tokio::time::sleep(Duration::from_millis(inv.delay_ms)).await;
            }
            let _ = inbox.send(Command::Completed { invocation: Box::new(inv), result: Box::new(result) });
        });
    }

    fn start_grace(&mut self) {
        if matches!(self.session.state(), SessionState::Created | SessionState::Ended) {
            return;
        }
        self.grace_generation += 1;
        let generation = self.grace_generation;
        let inbox = self.inbox.clone();
        let grace = self.config.participant_grace;
        tokio::spawn(async move {
            tokio::time::sleep(grace).await;
            let _ = inbox.send(Command::GraceExpired { generation });
        });
    }

    /// Write new events to disk, then publish them.
    fn flush(&mut self) {
        for ev in &self.session.events()[self.persisted..] {
            if let Err(e) = self.log.append(ev) {
                tracing::error!(session = %self.session.id(), "log write failed: {e}");
            }
            // No subscribers is fine.
            let _ = self.events.send(Arc::new(ev.clone()));
        }
        self.persisted = self.session.events().len();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// What `Hub::recover` found on disk.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RecoveryReport {
    pub sessions: usize,
    pub torn_lines: usize,
    pub resumed_invocations: usize,
    /// Logs that could not be replayed, with the reason.
    pub failed: Vec<(SessionId, String)>,
}

struct HubInner {
    store: Store,
    registry: AdapterRegistry,
    config: HubConfig,
    sessions: RwLock<HashMap<SessionId, SessionHandle>>,
}

/// Registry of session actors.
#[derive(Clone)]
pub struct Hub {
    inner: Arc<HubInner>,
}

impl Hub {
    /// Reload every session log under the store and restart its actor.
    /// Must run inside a tokio runtime.
    pub fn recover(store: Store, registry: AdapterRegistry, config: HubConfig) -> Result<(Self, RecoveryReport), StoreError> {
        let hub = Hub { inner: Arc::new(HubInner { store, registry, config, sessions: RwLock::new(HashMap::new()) }) };
        let mut report = RecoveryReport::default();
        for id in hub.inner.store.session_ids()? {
            match hub.reload(&id) {
                Ok((torn, resumed)) => {
                    report.sessions += 1;
                    report.torn_lines += usize::from(torn);
                    report.resumed_invocations += usize::from(resumed);
                }
                Err(e) => {
                    tracing::error!(session = %id, "not recovered: {e}");
                    report.failed.push((id, e));
                }
            }
        }
        Ok((hub, report))
    }

    fn reload(&self, id: &SessionId) -> Result<(bool, bool), String> {
        let store = &self.inner.store;
        let loaded = store.read_log(id).map_err(|e| e.to_string())?;
        let session = Session::replay(&loaded.events).map_err(|e| e.to_string())?;
        let tokens = store.load_tokens(id).map_err(|e| e.to_string())?;
        let log = store.append_log(id).map_err(|e| e.to_string())?;
        let resume = session.pending_invocation();
        let resumed = resume.is_some();
        // Nobody is connected after a restart; the participant gets the
        // usual grace period to come back.
        self.spawn(session, log, tokens, resume, true);
        Ok((loaded.truncated_bytes > 0, resumed))
    }

    pub fn config(&self) -> &HubConfig {
        &self.inner.config
    }

    pub fn start_session(&self, experiment: &Experiment) -> Result<SessionHandle, HubError> {
        let id = SessionId::generate();
        let session = Session::start(experiment, id.clone(), Timestamp::now())?;
        let tokens = Tokens::generate();
        let store = &self.inner.store;
        store.save_tokens(&id, &tokens)?;
        let mut log = store.create_log(&id)?;
        for ev in session.events() {
            log.append(ev)?;
        }
        Ok(self.spawn(session, log, tokens, None, false))
    }

    fn spawn(
        &self,
        session: Session,
        log: LogWriter,
        tokens: Tokens,
        resume: Option<Invocation>,
        orphaned: bool,
    ) -> SessionHandle {
        let (inbox, rx) = mpsc::unbounded_channel();
        let (events, _) = broadcast::channel(1024);
        let handle = SessionHandle {
            id: session.id().clone(),
            experiment_id: session.experiment().id.clone(),
            tokens,
            inbox: inbox.clone(),
            events: events.clone(),
        };
        let mut actor = SessionActor {
            persisted: session.events().len(),
            session,
            log,
            events,
            inbox,
            registry: self.inner.registry.clone(),
            config: self.inner.config.clone(),
            participants: 0,
            grace_generation: 0,
        };
        actor.dispatch(resume);
        if orphaned {
            actor.start_grace();
        }
        tokio::spawn(actor.run(rx));
        self.inner.sessions.write().expect("not poisoned").insert(handle.id.clone(), handle.clone());
        handle
    }

    pub fn get(&self, id: &SessionId) -> Option<SessionHandle> {
        self.inner.sessions.read().expect("not poisoned").get(id).cloned()
    }

    pub fn list(&self) -> Vec<SessionHandle> {
        let mut all: Vec<SessionHandle> = self.inner.sessions.read().expect("not poisoned").values().cloned().collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        all
    }
}
