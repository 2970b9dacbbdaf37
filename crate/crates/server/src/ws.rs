//! The real-time channel: one WebSocket per client, authenticated by the
//! capability token in the join URL.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use ozwoz_core::SessionId;

use crate::api::{ApiError, AppState};
use crate::hub::{HubConfig, SessionHandle};
use crate::protocol::{self, event_message, parse_client_message, rejection, Role, ServerMessage};

#[derive(Deserialize)]
pub struct TokenQuery {
    token: String,
}

pub async fn channel(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
    upgrade: WebSocketUpgrade,
) -> Response {
    let Some(handle) = app.hub.get(&SessionId::new(id.as_str())) else {
        return ApiError::new(StatusCode::NOT_FOUND, format!("session {id} not found")).into_response();
    };
    let Some(role) = handle.role_for(&q.token) else {
        return ApiError::new(StatusCode::FORBIDDEN, "invalid token").into_response();
    };
    let config = app.hub.config().clone();
    upgrade.on_upgrade(move |socket| connection(socket, handle, role, config))
}

async fn connection(socket: WebSocket, handle: SessionHandle, role: Role, config: HubConfig) {
    let (mut sink, mut stream) = socket.split();
    let mut events = handle.subscribe();
    handle.connected(role);
    let mut heartbeat = tokio::time::interval(config.heartbeat);
    heartbeat.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    heartbeat.tick().await;
    let mut missed = 0u32;

    loop {
        let outgoing: Vec<ServerMessage> = tokio::select! {
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => reply(&handle, role, text.as_str()).await,
                Some(Ok(Message::Binary(_))) => vec![protocol::protocol_error(
                    handle.id(),
                    role,
                    &protocol::ProtocolError { code: "bad_envelope", message: "binary frames are not supported".into() },
                )],
                Some(Ok(Message::Pong(_))) => {
                    missed = 0;
                    vec![]
                }
                Some(Ok(Message::Ping(_))) => vec![],
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
            },
            ev = events.recv() => match ev {
                Ok(ev) => event_message(&ev, role).into_iter().collect(),
                // Fell behind the broadcast; send the whole view instead.
                Err(RecvError::Lagged(_)) => reply(&handle, role, r#"{"type":"state_sync"}"#).await,
                Err(RecvError::Closed) => break,
            },
            _ = heartbeat.tick() => {
                if missed >= config.max_missed_pongs {
                    tracing::info!(session = %handle.id(), ?role, "closing after {missed} missed pongs");
                    let _ = sink.send(Message::Close(None)).await;
                    break;
                }
                missed += 1;
                if sink.send(Message::Ping(Default::default())).await.is_err() {
                    break;
                }
                vec![]
            }
        };
        for msg in outgoing {
            if sink.send(Message::Text(msg.to_text().into())).await.is_err() {
                handle.disconnected(role);
                return;
            }
        }
    }
    handle.disconnected(role);
}

/// Direct replies to one client frame.
async fn reply(handle: &SessionHandle, role: Role, text: &str) -> Vec<ServerMessage> {
    let request = match parse_client_message(text, role, handle.id()) {
        Ok(r) => r,
        Err(e) => return vec![protocol::protocol_error(handle.id(), role, &e)],
    };
    match handle.command(role, request).await {
        Ok(Some(view)) => vec![ServerMessage::control(handle.id(), role, "state_sync", view)],
        Ok(None) => vec![],
        Err(e) => vec![rejection(handle.id(), role, &e)],
    }
}
