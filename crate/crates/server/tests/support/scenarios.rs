//! End-to-end desk scenarios driven over the real channel protocol.
//!
//! Each returns a short summary on success and a reason on failure, so the
//! acceptance runner can report them and ordinary tests can assert on them.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use reqwest::StatusCode;
use serde_json::{json, Value};

use ozwoz_core::session::Session;
use ozwoz_core::SessionId;
use ozwoz_server::store::Store;

use super::{check_golden, check_log_integrity, create_experiment, create_session, transcript, Bot, Http, TestServer};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub type Outcome = Result<String, String>;

async fn upload(http: &Http, bytes: &[u8]) -> Result<String, String> {
    let (status, body) = http.post_bytes("/assets", bytes.to_vec(), "audio/wav").await;
    ensure!(status == StatusCode::CREATED, "asset upload: {status} {body}");
    Ok(body["id"].as_str().unwrap_or_default().to_string())
}

/// Both clients joined and said hello.
async fn join(http: &Http, experiment_id: &str) -> (String, Bot, Bot) {
    let j = create_session(http, experiment_id).await;
    let mut wizard = Bot::connect(http, &j.session_id, &j.wizard_token, "wizard").await;
    wizard.request("hello", json!({}), "state_sync").await;
    let mut participant = Bot::connect(http, &j.session_id, &j.participant_token, "participant").await;
    participant.request("hello", json!({}), "state_sync").await;
    wizard.recv_type("participant_ready").await;
    (j.session_id, wizard, participant)
}

/// One participant turn answered by one wizard action. Returns the
/// participant's `system_output` message after acking it.
async fn exchange(wizard: &mut Bot, participant: &mut Bot, input: Value, action: Value, ack: &[&str]) -> Value {
    participant.send("participant_input", input).await;
    wizard.recv_type("wizard_shown").await;
    wizard.send("wizard_action", action).await;
    deliver(wizard, participant, ack).await
}

async fn deliver(wizard: &mut Bot, participant: &mut Bot, ack: &[&str]) -> Value {
    let out = participant.recv_type("system_output").await;
    wizard.recv_type("system_output").await;
    for kind in ack {
        participant.send("delivery_ack", json!({ "output_seq": out["seq"], "kind": kind })).await;
        wizard.recv_type("delivery_ack").await;
    }
    out
}

async fn end(wizard: &mut Bot, participant: &mut Bot, reason: &str) {
    wizard.send("end_session", json!({ "reason": reason })).await;
    participant.recv_type("session_end").await;
    wizard.recv_type("session_end").await;
}

fn outputs(msgs: &[Value]) -> Vec<(String, Option<String>)> {
    msgs.iter()
        .filter(|m| m["type"] == "system_output")
        .map(|m| {
            (m["payload"]["text"].as_str().unwrap_or_default().to_string(), m["payload"]["audio"].as_str().map(String::from))
        })
        .collect()
}

fn leak_free(msgs: &[Value]) -> Result<(), String> {
    for m in msgs {
        if let Some(key) = ozwoz_server::protocol::wizard_only_key(m) {
            return Err(format!("participant received wizard-only field `{key}` in {m}"));
        }
    }
    Ok(())
}

pub fn case9_pipeline(output: &str) -> Value {
    let last = match output {
        "tts" => json!({"kind": "tts", "mode": "black_box", "settings": {"adapter": "tts-de", "language": "de"}}),
        _ => json!({"kind": "text_out", "mode": "black_box"}),
    };
    json!({"slots": [
        {"kind": "asr", "mode": "simulating", "settings": {"language": "de"}},
        {"kind": "input_mt", "mode": "simulating", "settings": {"source_language": "de", "target_language": "en"}},
        {"kind": "dm", "mode": "simulating"},
        {"kind": "output_mt", "mode": "black_box",
         "settings": {"adapter": "mt-en-de", "source_language": "en", "target_language": "de"}},
        last
    ]})
}

/// German customers talk to a product recommender. The wizard stands in for
/// speech recognition, input translation and dialogue management and may only
/// pick stored English utterances. Output goes through pre-translations and
/// recordings where they exist and through machine translation and synthesis
/// where they do not. A second session repeats the offer with text output.
pub async fn scenario_a() -> Outcome {
    let srv = TestServer::start(|_| {}).await;
    let http = &srv.http;
    let greet_audio = upload(http, b"RIFF....WAVE greet-de").await?;
    let ask_audio = upload(http, b"RIFF....WAVE ask-de").await?;
    let speech = [
        upload(http, b"RIFF....WAVE participant-1").await?,
        upload(http, b"RIFF....WAVE participant-2").await?,
        upload(http, b"RIFF....WAVE participant-3").await?,
        upload(http, b"RIFF....WAVE participant-4").await?,
    ];
    let doc = json!({
        "name": "Internet bundles, German speech",
        "stages": [
            {"id": "stg-greeting", "title": "Greeting", "utterance_ids": ["utt-greet", "utt-ask"]},
            {"id": "stg-offer", "title": "Offer", "utterance_ids": ["utt-offer", "utt-bye"]}
        ],
        "utterances": {
            "utt-greet": {"id": "utt-greet", "text": "Hello, how can I help you?", "language": "en",
                          "pretranslations": {"de": "Hallo, wie kann ich Ihnen helfen?"},
                          "prerecorded_audio": {"de": greet_audio}},
            "utt-ask": {"id": "utt-ask", "text": "Do you need internet at home or on the go?", "language": "en",
                        "pretranslations": {"de": "Brauchen Sie Internet zu Hause oder unterwegs?"},
                        "prerecorded_audio": {"de": ask_audio}},
            "utt-offer": {"id": "utt-offer", "text": "Which bundle would you like?", "language": "en"},
            "utt-bye": {"id": "utt-bye", "text": "Thank you, goodbye.", "language": "en",
                        "pretranslations": {"de": "Vielen Dank, auf Wiedersehen."}}
        },
        "frequently_used": ["utt-bye"],
        "pipeline": case9_pipeline("tts"),
        "chat_enabled": false
    });
    let exp = create_experiment(http, &doc).await;

    // Speech output.
    let (sid1, mut wizard, mut participant) = join(http, &exp).await;
    let said = |i: usize| json!({ "input": {"audio": speech[i]}, "language": "de" });
    let select = |id: &str| json!({ "kind": "select_utterance", "utterance_id": id });
    let both = ["displayed", "playback_finished"];

    wizard.send("stage_switch", json!({ "stage_id": "stg-greeting" })).await;
    wizard.recv_type("stage_switch").await;
    participant.send("participant_input", said(0)).await;
    wizard.recv_type("wizard_shown").await;

    // The open turn blocks a second input; roles and chat are enforced.
    let busy = participant.request("participant_input", said(1), "busy").await;
    ensure!(busy["payload"].is_object(), "busy reply {busy}");
    participant.send("wizard_action", select("utt-greet")).await;
    let forbidden = participant.recv_type("protocol_error").await;
    ensure!(forbidden["payload"]["code"] == "forbidden", "participant wizard_action: {forbidden}");
    wizard.send("wizard_action", json!({ "kind": "free_text", "text": "Guten Tag" })).await;
    let refused = wizard.recv_type("protocol_error").await;
    ensure!(refused["payload"]["code"] == "illegal_action", "free text with chat off: {refused}");

    wizard.send("wizard_action", select("utt-greet")).await;
    deliver(&mut wizard, &mut participant, &both).await;
    exchange(&mut wizard, &mut participant, said(1), select("utt-ask"), &both).await;
    wizard.send("stage_switch", json!({ "stage_id": "stg-offer" })).await;
    wizard.recv_type("stage_switch").await;
    exchange(&mut wizard, &mut participant, said(2), select("utt-offer"), &both).await;
    wizard.send("note", json!({ "text": "participant hesitated before answering" })).await;
    wizard.recv_type("note").await;
    exchange(&mut wizard, &mut participant, said(3), select("utt-bye"), &["displayed"]).await;
    end(&mut wizard, &mut participant, "task complete").await;

    let expected = vec![
        ("Hallo, wie kann ich Ihnen helfen?".to_string(), Some(greet_audio.clone())),
        ("Brauchen Sie Internet zu Hause oder unterwegs?".to_string(), Some(ask_audio.clone())),
        ("Welches Bündel möchten Sie gern?".to_string(), Some("tts-de-clip".to_string())),
        ("Vielen Dank, auf Wiedersehen.".to_string(), Some("tts-de-clip".to_string())),
    ];
    ensure!(outputs(&participant.received) == expected, "speech outputs {:?}", outputs(&participant.received));
    leak_free(&participant.received)?;
    let log1 = http.log(&sid1).await;
    check_log_integrity(&sid1, &log1)?;
    let participant1 = participant.received.clone();
    wizard.close().await;
    participant.close().await;

    // Text output for the second task; the finished session keeps its snapshot.
    let (_, current) = http.get(&format!("/experiments/{exp}")).await;
    let rev = current["revision"].as_u64().unwrap_or_default();
    let (status, body) = http.put(&format!("/experiments/{exp}/pipeline?revision={rev}"), &case9_pipeline("text")).await;
    ensure!(status == StatusCode::OK, "pipeline update: {status} {body}");
    let (sid2, mut wizard, mut participant) = join(http, &exp).await;
    exchange(&mut wizard, &mut participant, said(0), select("utt-offer"), &["displayed"]).await;
    exchange(&mut wizard, &mut participant, said(1), select("utt-bye"), &["displayed"]).await;
    end(&mut wizard, &mut participant, "task complete").await;
    let expected = vec![
        ("Welches Bündel möchten Sie gern?".to_string(), None),
        ("Vielen Dank, auf Wiedersehen.".to_string(), None),
    ];
    ensure!(outputs(&participant.received) == expected, "text outputs {:?}", outputs(&participant.received));
    leak_free(&participant.received)?;
    let log2 = http.log(&sid2).await;
    check_log_integrity(&sid2, &log2)?;
    let log1_again = http.log(&sid1).await;
    ensure!(log1_again == log1, "first session log changed after the pipeline edit");

    let text = transcript("speech output", &log1, &participant1)
        + &transcript("text output", &log2, &participant.received);
    check_golden("scenario_a.txt", &text)?;
    Ok(format!("{} + {} events", log1.len(), log2.len()))
}

/// Pronunciation feedback: spoken attempts go to the wizard, who composes
/// text feedback from slot templates or writes it from scratch.
pub async fn scenario_b() -> Outcome {
    let srv = TestServer::start(|_| {}).await;
    let http = &srv.http;
    let attempts = [
        upload(http, b"RIFF....WAVE attempt-1").await?,
        upload(http, b"RIFF....WAVE attempt-2").await?,
        upload(http, b"RIFF....WAVE attempt-3").await?,
    ];
    let doc = json!({
        "name": "Pronunciation trainer feedback",
        "stages": [
            {"id": "stg-feedback", "title": "Feedback", "utterance_ids": ["utt-stress", "utt-sound"]},
            {"id": "stg-general", "title": "General", "utterance_ids": ["utt-good", "utt-again"]}
        ],
        "utterances": {
            "utt-stress": {"id": "utt-stress", "text": "Stress the {nth} syllable of {word}.", "language": "en"},
            "utt-sound": {"id": "utt-sound", "text": "The {sound} sound in {word} was not clear.", "language": "en"},
            "utt-good": {"id": "utt-good", "text": "Well done, that was clear.", "language": "en"},
            "utt-again": {"id": "utt-again", "text": "Please read the sentence again.", "language": "en"}
        },
        "frequently_used": ["utt-again"],
        "pipeline": {"slots": [
            {"kind": "asr", "mode": "simulating", "settings": {"language": "en"}},
            {"kind": "dm", "mode": "simulating"},
            {"kind": "text_out", "mode": "black_box"}
        ]},
        "chat_enabled": true
    });
    let exp = create_experiment(http, &doc).await;
    let (sid, mut wizard, mut participant) = join(http, &exp).await;
    let said = |i: usize| json!({ "input": {"audio": attempts[i]}, "language": "en" });
    let template = |id: &str, bindings: Value| json!({ "kind": "select_utterance", "utterance_id": id, "bindings": bindings });

    participant.send("participant_input", said(0)).await;
    wizard.recv_type("wizard_shown").await;
    let (_, before) = http.get(&format!("/sessions/{sid}")).await;
    wizard.send("wizard_action", template("utt-stress", json!({ "nth": "second" }))).await;
    let missing = wizard.recv_type("protocol_error").await;
    ensure!(missing["payload"]["code"] == "missing_binding", "incomplete bindings: {missing}");
    let (_, after) = http.get(&format!("/sessions/{sid}")).await;
    ensure!(before["events"] == after["events"], "a rejected action was logged");

    wizard.send("wizard_action", template("utt-stress", json!({ "nth": "second", "word": "tomato" }))).await;
    deliver(&mut wizard, &mut participant, &["displayed"]).await;
    exchange(
        &mut wizard,
        &mut participant,
        said(1),
        template("utt-sound", json!({ "sound": "th", "word": "three" })),
        &["displayed"],
    )
    .await;
    exchange(
        &mut wizard,
        &mut participant,
        said(2),
        json!({ "kind": "free_text", "text": "Better! Now say it a little slower." }),
        &["displayed"],
    )
    .await;
    // Unprompted nudge with no open turn.
    wizard.send("wizard_action", template("utt-again", json!({}))).await;
    deliver(&mut wizard, &mut participant, &["displayed"]).await;
    end(&mut wizard, &mut participant, "lesson over").await;

    let texts: Vec<String> = outputs(&participant.received).into_iter().map(|(t, _)| t).collect();
    let expected = [
        "Stress the second syllable of tomato.",
        "The th sound in three was not clear.",
        "Better! Now say it a little slower.",
        "Please read the sentence again.",
    ];
    ensure!(texts == expected, "feedback texts {texts:?}");
    leak_free(&participant.received)?;
    let log = http.log(&sid).await;
    check_log_integrity(&sid, &log)?;
    let nudge = log.iter().rev().find(|e| e["type"] == "system_output").cloned().unwrap_or_default();
    ensure!(
        nudge["payload"].get("origin_seq").is_none() && nudge["payload"]["action_seq"].is_u64(),
        "wizard-initiated output {nudge}"
    );
    check_golden("scenario_b.txt", &transcript("pronunciation feedback", &log, &participant.received))?;
    Ok(format!("{} events", log.len()))
}

/// Text chat through a wizard-run dialogue manager and a working MT mock.
pub fn swarm_experiment() -> Value {
    let mut utterances = serde_json::Map::new();
    for i in 0..4 {
        let id = format!("utt-{i}");
        utterances.insert(
            id.clone(),
            json!({"id": id, "text": format!("Canned answer {i}."), "language": "en",
                   "pretranslations": {"de": format!("Vorbereitete Antwort {i}.")}}),
        );
    }
    json!({
        "name": "Concurrent text chat",
        "stages": [{"id": "stg-main", "title": "Main", "utterance_ids": ["utt-0", "utt-1", "utt-2", "utt-3"]}],
        "utterances": utterances,
        "pipeline": {"slots": [
            {"kind": "text_in", "mode": "black_box"},
            {"kind": "dm", "mode": "simulating"},
            {"kind": "output_mt", "mode": "black_box",
             "settings": {"adapter": "mt-echo", "source_language": "en", "target_language": "de"}},
            {"kind": "text_out", "mode": "black_box"}
        ]},
        "chat_enabled": true
    })
}

async fn swarm_member(http: Http, exp: String, index: usize, turns: usize) -> Result<usize, String> {
    let (sid, mut wizard, mut participant) = join(&http, &exp).await;
    for t in 0..turns {
        let action = if t % 2 == 0 {
            json!({ "kind": "select_utterance", "utterance_id": format!("utt-{}", (index + t) % 4) })
        } else {
            json!({ "kind": "free_text", "text": format!("Reply {t} for bot {index}.") })
        };
        let input = json!({ "input": {"text": format!("bot {index} says {t}")} });
        exchange(&mut wizard, &mut participant, input, action, &["displayed"]).await;
    }
    end(&mut wizard, &mut participant, "done").await;

    let log = http.log(&sid).await;
    check_log_integrity(&sid, &log)?;
    for m in wizard.received.iter().chain(&participant.received) {
        ensure!(m["session_id"] == sid, "{sid}: channel message of another session: {m}");
    }
    let logged: Vec<&str> = log
        .iter()
        .filter(|e| e["type"] == "system_output")
        .map(|e| e["payload"]["text"].as_str().unwrap_or_default())
        .collect();
    let received = outputs(&participant.received);
    let received: Vec<&str> = received.iter().map(|(t, _)| t.as_str()).collect();
    ensure!(logged.len() == turns, "{sid}: {} outputs logged for {turns} turns", logged.len());
    ensure!(logged == received, "{sid}: participant saw {received:?}, log has {logged:?}");
    Ok(log.len())
}

/// `sessions` bots each run `turns` turns at the same time.
pub async fn swarm(sessions: usize, turns: usize) -> Outcome {
    let srv = TestServer::start(|_| {}).await;
    let exp = create_experiment(&srv.http, &swarm_experiment()).await;
    let tasks: Vec<_> = (0..sessions)
        .map(|i| tokio::spawn(swarm_member(Http::new(&srv.http.base), exp.clone(), i, turns)))
        .collect();
    let mut events = 0;
    for task in tasks {
        events += task.await.map_err(|e| format!("bot crashed: {e}"))??;
    }
    let (_, list) = srv.http.get("/sessions").await;
    let listed = list.as_array().map_or(0, Vec::len);
    ensure!(listed == sessions, "{listed} sessions listed");
    Ok(format!("{sessions} sessions, {events} events"))
}

/// The `ozwoz` binary serving a data directory.
struct ServerProcess {
    child: Child,
    http: Http,
}

impl ServerProcess {
    fn start(data_dir: &std::path::Path) -> Result<Self, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_ozwoz"))
            .args(["serve", "--port", "0", "--data-dir"])
            .arg(data_dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start server: {e}"))?;
        let stdout = child.stdout.take().ok_or("no stdout")?;
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                let _ = tx.send(line);
            }
        });
        let line = match rx.recv_timeout(Duration::from_secs(20)) {
            Ok(line) => line,
            Err(_) => {
                let _ = child.kill();
                return Err("server did not report its address".into());
            }
        };
        let addr = line.strip_prefix("listening on ").ok_or_else(|| format!("unexpected banner {line:?}"))?;
        Ok(Self { child, http: Http::new(&format!("http://{addr}")) })
    }

    fn kill(mut self) -> Result<(), String> {
        self.child.kill().map_err(|e| e.to_string())?;
        self.child.wait().map_err(|e| e.to_string())?;
        Ok(())
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Kill the server while the wizard owes an answer, leave a torn line at the
/// end of the log, restart, and check the session comes back as it was after
/// the last complete line and can be finished.
pub async fn durability() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    super::write_adapters(dir.path());
    let first = ServerProcess::start(dir.path())?;
    let http = &first.http;
    let exp = create_experiment(http, &swarm_experiment()).await;
    let j = create_session(http, &exp).await;
    let sid = j.session_id.clone();
    let mut wizard = Bot::connect(http, &sid, &j.wizard_token, "wizard").await;
    wizard.request("hello", json!({}), "state_sync").await;
    let mut participant = Bot::connect(http, &sid, &j.participant_token, "participant").await;
    participant.request("hello", json!({}), "state_sync").await;
    wizard.recv_type("participant_ready").await;
    let select = json!({ "kind": "select_utterance", "utterance_id": "utt-1" });
    exchange(&mut wizard, &mut participant, json!({ "input": {"text": "hello"} }), select.clone(), &["displayed"]).await;
    participant.send("participant_input", json!({ "input": {"text": "which bundle?"} })).await;
    wizard.recv_type("wizard_shown").await;
    let (_, live) = http.get(&format!("/sessions/{sid}")).await;
    ensure!(live["awaiting_wizard"] == true, "no pending item before the crash: {live}");

    first.kill()?;
    drop((wizard, participant));

    let store = Store::open(dir.path(), false).map_err(|e| e.to_string())?;
    let path = store.log_path(&SessionId::new(&sid));
    let complete = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let torn = r#"{"seq":99,"ts":17000"#;
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .and_then(|mut f| f.write_all(torn.as_bytes()))
        .map_err(|e| e.to_string())?;
    // Independent reference: the complete lines replayed in-process.
    let reference = Session::replay_ndjson(&complete).map_err(|e| e.to_string())?;
    let reference_digest = format!("{:016x}", reference.digest());
    ensure!(live["digest"] == reference_digest, "live digest {} but complete lines give {reference_digest}", live["digest"]);

    let second = ServerProcess::start(dir.path())?;
    let http = &second.http;
    let (status, back) = http.get(&format!("/sessions/{sid}")).await;
    ensure!(status == StatusCode::OK, "session missing after restart: {status}");
    ensure!(back["digest"] == live["digest"], "digest {} after restart, {} before", back["digest"], live["digest"]);
    ensure!(back["events"] == live["events"], "{} events after restart, {} before", back["events"], live["events"]);
    ensure!(back["awaiting_wizard"] == true, "pending item lost: {back}");
    let repaired = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    ensure!(repaired == complete, "log not cut back to its complete lines");

    // Carry on where the crash interrupted.
    let mut wizard = Bot::connect(http, &sid, &j.wizard_token, "wizard").await;
    let view = wizard.request("hello", json!({}), "state_sync").await;
    ensure!(view["payload"]["pending"].is_object(), "wizard view has no pending item: {view}");
    let mut participant = Bot::connect(http, &sid, &j.participant_token, "participant").await;
    let pview = participant.request("hello", json!({}), "state_sync").await;
    ensure!(pview["payload"]["outputs"].as_array().map_or(0, Vec::len) == 1, "participant view {pview}");
    wizard.send("wizard_action", select).await;
    let out = deliver(&mut wizard, &mut participant, &["displayed"]).await;
    ensure!(out["payload"]["text"] == "Vorbereitete Antwort 1.", "output after restart {out}");
    end(&mut wizard, &mut participant, "done").await;
    let log = http.log(&sid).await;
    check_log_integrity(&sid, &log)?;
    let text: String = log.iter().map(|e| e.to_string() + "\n").collect();
    Session::replay_ndjson(&text).map_err(|e| format!("final log does not replay: {e}"))?;
    second.kill()?;
    Ok(format!("{} events before the crash, {} at the end", live["events"], log.len()))
}
