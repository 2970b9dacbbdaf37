//! Test harness: an in-process server on a temp data directory, an HTTP
//! helper and a WebSocket bot client.

#![allow(dead_code)]

pub mod scenarios;

use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use ozwoz_server::{RunningServer, ServerOptions};

/// How long a bot waits for any single message.
pub const RECV_TIMEOUT: Duration = Duration::from_secs(5);

/// Mock adapters used across the server tests, written into the data dir.
pub fn write_adapters(dir: &Path) {
    let fixtures = [
        (
            "mt-en-de.json",
            json!([
                // A deliberately clumsy translation, standing in for raw online MT.
                {"match": "Which bundle would you like?", "candidates": [["Welches Bündel möchten Sie gern?", 0.6]]},
                {"match": "Thank you, goodbye.", "candidates": [["Danke, auf Wiedersehen.", 0.9]]},
                {"candidates": [["[de] ?", 0.1]]}
            ]),
        ),
        ("tts-de.json", json!([{"candidates": [["tts-de-clip", 1.0]]}])),
        ("mt-echo.json", json!([{"candidates": [["(translated)", 0.5]]}])),
    ];
    for (name, doc) in &fixtures {
        std::fs::write(dir.join(name), serde_json::to_string_pretty(doc).unwrap()).unwrap();
    }
    let registry = json!([
        {"id": "mt-en-de", "slot_kind": "output_mt", "mock_fixture_path": "mt-en-de.json"},
        {"id": "tts-de", "slot_kind": "tts", "mock_fixture_path": "tts-de.json"},
        {"id": "mt-echo", "slot_kind": "output_mt", "mock_fixture_path": "mt-echo.json"}
    ]);
    std::fs::write(dir.join("adapters.json"), registry.to_string()).unwrap();
}

pub struct Http {
    pub base: String,
    client: reqwest::Client,
}

impl Http {
    pub fn new(base: &str) -> Self {
        Self { base: base.trim_end_matches('/').to_string(), client: reqwest::Client::new() }
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> (StatusCode, Value) {
        let resp = req.send().await.expect("request sent");
        let status = resp.status();
        let text = resp.text().await.expect("body read");
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        self.send(self.client.get(format!("{}{path}", self.base))).await
    }

    pub async fn get_text(&self, path: &str) -> (StatusCode, String) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().await.expect("request sent");
        (resp.status(), resp.text().await.expect("body read"))
    }

    pub async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        self.send(self.client.post(format!("{}{path}", self.base)).json(body)).await
    }

    pub async fn post_bytes(&self, path: &str, body: Vec<u8>, content_type: &str) -> (StatusCode, Value) {
        self.send(
            self.client.post(format!("{}{path}", self.base)).header("content-type", content_type).body(body),
        )
        .await
    }

    pub async fn put(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        self.send(self.client.put(format!("{}{path}", self.base)).json(body)).await
    }

    pub async fn delete(&self, path: &str) -> (StatusCode, Value) {
        self.send(self.client.delete(format!("{}{path}", self.base))).await
    }

    /// Session log as parsed NDJSON lines.
    pub async fn log(&self, session_id: &str) -> Vec<Value> {
        let (status, text) = self.get_text(&format!("/sessions/{session_id}/log")).await;
        assert_eq!(status, StatusCode::OK, "log of {session_id}");
        text.lines().map(|l| serde_json::from_str(l).expect("log line is JSON")).collect()
    }

    pub fn ws_url(&self, session_id: &str, token: &str) -> String {
        format!("{}/sessions/{session_id}/channel?token={token}", self.base.replacen("http", "ws", 1))
    }
}

pub struct TestServer {
    pub server: RunningServer,
    pub http: Http,
    pub dir: TempDir,
}

impl TestServer {
    pub async fn start(configure: impl FnOnce(&mut ServerOptions)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_adapters(dir.path());
        let mut opts = ServerOptions::new(dir.path());
        configure(&mut opts);
        let server = ozwoz_server::spawn(&opts, "127.0.0.1:0".parse().unwrap()).await.expect("server starts");
        let http = Http::new(&server.url());
        Self { server, http, dir }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.abort();
    }
}

/// Tokens and ids returned by `POST /sessions`.
#[derive(Debug, Clone)]
pub struct Joined {
    pub session_id: String,
    pub wizard_token: String,
    pub participant_token: String,
}

pub async fn create_session(http: &Http, experiment_id: &str) -> Joined {
    let (status, body) = http.post("/sessions", &json!({ "experiment_id": experiment_id })).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    Joined {
        session_id: body["session_id"].as_str().unwrap().to_string(),
        wizard_token: body["wizard_token"].as_str().unwrap().to_string(),
        participant_token: body["participant_token"].as_str().unwrap().to_string(),
    }
}

pub async fn create_experiment(http: &Http, doc: &Value) -> String {
    let (status, body) = http.post("/experiments", doc).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

/// A scripted channel client. Everything it receives is kept in `received`.
pub struct Bot {
    pub role: &'static str,
    stream: WebSocketStream<MaybeTlsStream<TcpStream>>,
    pub received: Vec<Value>,
}

impl Bot {
    pub async fn connect(http: &Http, session_id: &str, token: &str, role: &'static str) -> Self {
        let (stream, _) =
            tokio_tungstenite::connect_async(http.ws_url(session_id, token)).await.expect("channel opens");
        Self { role, stream, received: Vec::new() }
    }

    pub async fn send(&mut self, kind: &str, payload: Value) {
        let msg = json!({ "role": self.role, "client_ts": 0, "type": kind, "payload": payload });
        self.send_raw(&msg.to_string()).await;
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.stream.send(Message::text(text)).await.expect("frame sent");
    }

    /// Next text message; pings are answered by the library as we read.
    pub async fn recv(&mut self) -> Value {
        self.try_recv(RECV_TIMEOUT).await.unwrap_or_else(|e| panic!("{} bot: {e}", self.role))
    }

    pub async fn try_recv(&mut self, timeout: Duration) -> Result<Value, String> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let frame = tokio::time::timeout_at(deadline, self.stream.next())
                .await
                .map_err(|_| "timed out waiting for a message".to_string())?;
            match frame {
                Some(Ok(Message::Text(t))) => {
                    let v: Value = serde_json::from_str(t.as_str()).map_err(|e| e.to_string())?;
                    self.received.push(v.clone());
                    return Ok(v);
                }
                Some(Ok(Message::Close(_))) | None => return Err("channel closed".into()),
                Some(Err(e)) => return Err(e.to_string()),
                Some(Ok(_)) => {}
            }
        }
    }

    /// Skip ahead to the next message of type `kind`.
    pub async fn recv_type(&mut self, kind: &str) -> Value {
        loop {
            let v = self.recv().await;
            if v["type"] == kind {
                return v;
            }
        }
    }

    /// Send and wait for the direct reply of a request that has one.
    pub async fn request(&mut self, kind: &str, payload: Value, reply: &str) -> Value {
        self.send(kind, payload).await;
        self.recv_type(reply).await
    }

    pub async fn close(mut self) {
        let _ = self.stream.close(None).await;
    }

    /// Wait until the server closes the channel; `Err` if a message or
    /// nothing arrives instead.
    pub async fn expect_closed(&mut self, timeout: Duration) -> Result<(), String> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            match tokio::time::timeout_at(deadline, self.stream.next()).await {
                Err(_) => return Err("still open".into()),
                Ok(Some(Ok(Message::Close(_)))) | Ok(None) | Ok(Some(Err(_))) => return Ok(()),
                Ok(Some(Ok(_))) => {}
            }
        }
    }
}

/// Stable text rendering of a session for golden comparison: the log with
/// volatile fields removed, then what the participant's client received.
pub fn transcript(title: &str, log: &[Value], participant: &[Value]) -> String {
    let mut out = format!("## {title}\n# log\n");
    for ev in log {
        let mut payload = ev["payload"].clone();
        scrub(&mut payload);
        if ev["type"] == "session_start" {
            payload = json!({ "experiment": ev["payload"]["experiment"]["name"] });
        }
        out += &format!(
            "{:03} {} {} {}\n",
            ev["seq"].as_u64().unwrap(),
            actor_label(&ev["actor"]),
            ev["type"].as_str().unwrap(),
            canonical(&payload)
        );
    }
    out += "# participant\n";
    for m in participant {
        let seq = m["seq"].as_u64().map_or("-".to_string(), |s| s.to_string());
        let mut payload = m["payload"].clone();
        scrub(&mut payload);
        out += &format!("{} {} {}\n", m["type"].as_str().unwrap(), seq, canonical(&payload));
    }
    out
}

fn actor_label(actor: &Value) -> String {
    match actor {
        Value::String(s) => s.clone(),
        Value::Object(m) => format!("component:{}", m["component"].as_str().unwrap_or("?")),
        _ => "?".into(),
    }
}

/// Remove wall-clock dependent fields.
fn scrub(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("latency_ms");
            m.remove("session_id");
            m.remove("ts");
            m.remove("server_ts");
            m.values_mut().for_each(scrub);
        }
        Value::Array(items) => items.iter_mut().for_each(scrub),
        _ => {}
    }
}

fn canonical(v: &Value) -> String {
    ozwoz_core::canonical::to_canonical_string(v).unwrap()
}

/// Compare with `tests/golden/<name>`; with `OZWOZ_BLESS=1` rewrite it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var("OZWOZ_BLESS").is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let first = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()));
    Err(format!(
        "{name} differs at line {}:\n  expected: {}\n  actual:   {}",
        first + 1,
        expected.lines().nth(first).unwrap_or("<end>"),
        actual.lines().nth(first).unwrap_or("<end>")
    ))
}

/// Seqs must run 0, 1, 2, ... and every event must belong to `session_id`.
pub fn check_log_integrity(session_id: &str, log: &[Value]) -> Result<(), String> {
    for (i, ev) in log.iter().enumerate() {
        if ev["seq"].as_u64() != Some(i as u64) {
            return Err(format!("{session_id}: seq {} at position {i}", ev["seq"]));
        }
        if ev["session_id"] != session_id {
            return Err(format!("{session_id}: event {i} belongs to {}", ev["session_id"]));
        }
    }
    Ok(())
}
