//! Randomised scripted sessions over mock components, shared by the replay
//! property tests and the acceptance suite.

#![allow(dead_code)]

pub mod fidelity;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ozwoz_core::adapters::{AdapterRegistry, DegradationProfile, FixtureEntry, MockAdapter, Payload};
use ozwoz_core::model::{DomainRecord, Experiment, FilterSpec};
use ozwoz_core::pipeline::{validate, ComponentMode, PipelineConfig, SlotKind, SlotSettings};
use ozwoz_core::session::driver::{drive, Clock, ManualClock};
use ozwoz_core::session::{AckKind, Actor, Session, WizardAction};
use ozwoz_core::UtteranceId;

pub fn mock_registry() -> AdapterRegistry {
    let mut reg = AdapterRegistry::new();
    let fallback = |kind, cands: &[(&str, f64)]| MockAdapter::new(kind, vec![FixtureEntry::fallback(cands)]);
    reg.register("mock-asr", SlotKind::Asr, fallback(SlotKind::Asr, &[("hello there", 0.9), ("yellow there", 0.5), ("hello their", 0.3)]), false);
    reg.register("mock-input-mt", SlotKind::InputMt, fallback(SlotKind::InputMt, &[("hallo da", 0.8), ("hallo dort", 0.6)]), false);
    reg.register("mock-dm", SlotKind::Dm, fallback(SlotKind::Dm, &[("How can I help?", 1.0)]), false);
    reg.register("mock-output-mt", SlotKind::OutputMt, fallback(SlotKind::OutputMt, &[("Wie kann ich helfen?", 0.7)]), false);
    reg.register("mock-tts", SlotKind::Tts, fallback(SlotKind::Tts, &[("asset-tts-1", 1.0)]), false);
    reg
}

fn adapter_id(kind: SlotKind) -> &'static str {
    match kind {
        SlotKind::Asr => "mock-asr",
        SlotKind::InputMt => "mock-input-mt",
        SlotKind::Dm => "mock-dm",
        SlotKind::OutputMt => "mock-output-mt",
        _ => "mock-tts",
    }
}

/// A random pipeline that passes validation.
pub fn random_config(rng: &mut ChaCha8Rng) -> PipelineConfig {
    use ComponentMode::*;
    loop {
        let speech_in = rng.random_bool(0.5);
        let speech_out = rng.random_bool(0.5);
        let mut cfg = PipelineConfig::off();
        let pick = |rng: &mut ChaCha8Rng, choices: &[ComponentMode]| *choices.choose(rng).expect("non-empty");
        if speech_in {
            cfg.set_mode(SlotKind::Asr, pick(rng, &[BlackBox, Correcting, Simulating]));
        } else {
            cfg.set_mode(SlotKind::TextIn, BlackBox);
        }
        cfg.set_mode(SlotKind::InputMt, pick(rng, &[Off, Off, BlackBox, Correcting, Simulating]));
        cfg.set_mode(SlotKind::Dm, pick(rng, &[BlackBox, Correcting, Simulating, Simulating]));
        cfg.set_mode(SlotKind::OutputMt, pick(rng, &[Off, Off, BlackBox, Correcting, Simulating]));
        if speech_out {
            cfg.set_mode(SlotKind::Tts, pick(rng, &[BlackBox, BlackBox, Correcting, Simulating]));
        } else {
            cfg.set_mode(SlotKind::TextOut, pick(rng, &[BlackBox, BlackBox, Correcting, Simulating]));
        }
        for kind in SlotKind::ALL {
            if kind.is_plain_io() || !cfg.mode(kind).is_active() {
                continue;
            }
            let mut s = SlotSettings::adapter(adapter_id(kind));
            match kind {
                SlotKind::InputMt => s = s.with_languages("en", "de"),
                SlotKind::OutputMt => s = s.with_languages("de", "en"),
                SlotKind::Asr => s = s.with_language("en"),
                _ => {}
            }
            if cfg.mode(kind) == Correcting && rng.random_bool(0.5) {
                s = s.with_nbest(rng.random_range(1..=3));
            }
            if rng.random_bool(0.4) {
                s = s.with_degradation(DegradationProfile {
                    substitution_rate: rng.random_range(0.0..0.5),
                    deletion_rate: rng.random_range(0.0..0.3),
                    fixed_delay_ms: rng.random_range(0..200),
                    jitter_ms: rng.random_range(0..100),
                    seed: rng.random(),
                });
            }
            cfg = cfg.with_settings(kind, s);
        }
        if validate(&cfg).is_ok() {
            return cfg;
        }
    }
}

pub fn random_experiment(rng: &mut ChaCha8Rng) -> (Experiment, Vec<UtteranceId>) {
    let mut exp = Experiment::new("random", random_config(rng));
    exp.chat_enabled = rng.random_bool(0.5);
    let main = exp.stages[0].id.clone();
    let second = exp.add_stage("Second");
    let mut ids = Vec::new();
    for (i, text) in ["Hello!", "Where to?", "Please repeat.", "Stress the {nth} syllable of {word}.", "Good bye."]
        .iter()
        .enumerate()
    {
        let stage = if i % 2 == 0 { &main } else { &second };
        let id = exp.create_utterance(stage, text, "en".into()).unwrap();
        if rng.random_bool(0.5) {
            exp.utterance_mut(&id).unwrap().pretranslations.insert("de".into(), format!("[de] {text}"));
        }
        if rng.random_bool(0.3) {
            exp.utterance_mut(&id).unwrap().prerecorded_audio.insert("en".into(), format!("asset-rec-{i}").as_str().into());
        }
        ids.push(id);
    }
    exp.domain_records = vec![
        DomainRecord::new("r1").with("city", "Dublin").with("price", 40.0),
        DomainRecord::new("r2").with("city", "Graz").with("price", 60.0),
    ];
    exp.filters = vec![FilterSpec::new("city", ["Dublin".into()])];
    (exp, ids)
}

/// Run `steps` random actions against a fresh session. Illegal attempts are
/// made on purpose; they must leave no trace in the log.
pub fn run_random_session(seed: u64, steps: usize) -> Session {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (exp, utterances) = random_experiment(&mut rng);
    let reg = mock_registry();
    let clock = ManualClock::new(1_700_000_000_000);
    let mut s = Session::start(&exp, format!("ses-rand-{seed}").as_str().into(), clock.now()).unwrap();
    s.record_digests();
    let speech_in = exp.pipeline.mode(SlotKind::Asr).is_active();
    for _ in 0..steps {
        clock.advance(rng.random_range(0..2_000));
        let before = s.events().len();
        let roll = rng.random_range(0..100);
        let result = match roll {
            0..=4 => s.participant_ready(clock.now()).map(|_| None),
            5..=34 => {
                let input = if speech_in {
                    Payload::Audio(format!("clip-{}", rng.random_range(0..5)).as_str().into())
                } else {
                    Payload::text(["hi", "I need a train", "Hi!", "where is it"].choose(&mut rng).unwrap().to_string())
                };
                s.participant_input(input, None, clock.now())
            }
            35..=74 => {
                let action = random_action(&mut rng, &s, &utterances);
                s.wizard_action(action, clock.now())
            }
            75..=84 => match s.history().choose(&mut rng).map(|h| h.seq) {
                Some(seq) => {
                    let kind = if rng.random_bool(0.5) { AckKind::Displayed } else { AckKind::PlaybackFinished };
                    s.delivery_ack(seq, kind, clock.now()).map(|_| None)
                }
                None => Ok(None),
            },
            85..=89 => s.note(&format!("note {}", rng.random_range(0..100)), clock.now()).map(|_| None),
            90..=93 => {
                let city = ["Dublin", "Graz"].choose(&mut rng).unwrap();
                s.filter_change("city", vec![(*city).into()], clock.now()).map(|_| None)
            }
            94..=97 => {
                let stage = exp.stages.choose(&mut rng).unwrap().id.clone();
                s.stage_switch(&stage, clock.now()).map(|_| None)
            }
            _ => {
                if rng.random_bool(0.3) {
                    s.end("scripted end", Actor::Wizard, clock.now()).map(|_| None)
                } else {
                    Ok(None)
                }
            }
        };
        match result {
            Ok(inv) => drive(&mut s, &reg, &clock, inv).unwrap(),
            Err(_) => assert_eq!(s.events().len(), before, "rejected command must not log"),
        }
    }
    s
}

fn random_action(rng: &mut ChaCha8Rng, s: &Session, utterances: &[UtteranceId]) -> WizardAction {
    let utt = utterances.choose(rng).unwrap().clone();
    let with_bindings = rng.random_bool(0.7);
    match rng.random_range(0..6) {
        0 | 1 => {
            if with_bindings {
                WizardAction::select_with(&utt, &[("nth", "second"), ("word", "tomato")])
            } else {
                WizardAction::select(&utt)
            }
        }
        2 => WizardAction::FreeText { text: "Let me check.".into() },
        3 => {
            let n = s.pending().and_then(|p| p.candidates.as_ref()).map_or(1, |c| c.len());
            WizardAction::PickCandidate { index: rng.random_range(0..n + 1) }
        }
        4 => WizardAction::SubmitCorrection { text: "corrected text".into() },
        _ => WizardAction::Approve,
    }
}

/// Replay every prefix of the log and compare with the digests taken live.
pub fn check_prefix_digests(s: &Session) -> Result<usize, String> {
    let trail = s.digest_trail().ok_or("digest recording was off")?;
    if trail.len() != s.events().len() {
        return Err(format!("{} digests for {} events", trail.len(), s.events().len()));
    }
    for (k, live) in trail.iter().enumerate() {
        let replayed = Session::replay(&s.events()[..=k]).map_err(|e| e.to_string())?;
        if replayed.digest() != *live {
            return Err(format!("digest mismatch after {} events", k + 1));
        }
    }
    let text: String = s.events().iter().map(|e| e.to_json_line() + "\n").collect();
    let from_text = Session::replay_ndjson(&text).map_err(|e| e.to_string())?;
    if from_text.digest() != s.digest() {
        return Err("ndjson round trip changed the digest".into());
    }
    Ok(trail.len())
}
