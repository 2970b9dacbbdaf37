//! Offline metrics over session logs.
//!
//! All functions are pure over immutable inputs, so sessions can be
//! analysed in parallel.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::Payload;
use crate::ids::{Timestamp, UtteranceId};
use crate::session::{EventBody, SessionEvent, WizardAction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("not enough data: {0}")]
    NoData(&'static str),
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("csv export failed: {0}")]
    Csv(String),
}

/// One delivered system output and what led to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub input_seq: Option<u64>,
    pub input_ts: Option<Timestamp>,
    pub wizard_action_seq: Option<u64>,
    pub wizard_action_ts: Option<Timestamp>,
    pub output_seq: u64,
    pub output_ts: Timestamp,
    pub ack_ts: Option<Timestamp>,
    pub utterance_id: Option<UtteranceId>,
    pub input_text: Option<String>,
    pub output_text: String,
}

impl TurnRecord {
    pub fn latency_ms(&self) -> Option<i64> {
        self.input_ts.map(|i| self.output_ts.0 - i.0)
    }
}

/// One record per system output, in output order. Wizard-initiated outputs
/// have empty input fields.
pub fn extract_turns(events: &[SessionEvent]) -> Result<Vec<TurnRecord>, AnalysisError> {
    let mut by_seq: HashMap<u64, &SessionEvent> = HashMap::new();
    let mut records: Vec<TurnRecord> = Vec::new();
    let mut record_of_output: HashMap<u64, usize> = HashMap::new();
    for (i, ev) in events.iter().enumerate() {
        if ev.seq != i as u64 {
            return Err(AnalysisError::CorruptLog { seq: ev.seq, reason: format!("expected seq {i}") });
        }
        by_seq.insert(ev.seq, ev);
        match &ev.body {
            EventBody::SystemOutput(out) => {
                let input = match out.origin_seq {
                    Some(s) => match by_seq.get(&s).map(|e| (&e.body, e.ts)) {
                        Some((EventBody::ParticipantInput(p), ts)) => Some((s, ts, &p.input)),
                        _ => {
                            return Err(AnalysisError::CorruptLog {
                                seq: ev.seq,
                                reason: format!("origin {s} is not an earlier participant input"),
                            })
                        }
                    },
                    None => None,
                };
                // The selected utterance counts even when translation, synthesis
                // or slot filling changed the text that went out.
                let mut selected = None;
                let action_ts = match out.action_seq {
                    Some(s) => match by_seq.get(&s).map(|e| (&e.body, e.ts)) {
                        Some((EventBody::WizardAction(a), ts)) => {
                            if let WizardAction::SelectUtterance { utterance_id, .. } = &a.action {
                                selected = Some(utterance_id.clone());
                            }
                            Some(ts)
                        }
                        _ => {
                            return Err(AnalysisError::CorruptLog {
                                seq: ev.seq,
                                reason: format!("action {s} is not an earlier wizard action"),
                            })
                        }
                    },
                    None => None,
                };
                record_of_output.insert(ev.seq, records.len());
                records.push(TurnRecord {
                    input_seq: input.map(|i| i.0),
                    input_ts: input.map(|i| i.1),
                    wizard_action_seq: out.action_seq,
                    wizard_action_ts: action_ts,
                    output_seq: ev.seq,
                    output_ts: ev.ts,
                    ack_ts: None,
                    utterance_id: selected.or_else(|| out.utterance_id.clone()),
                    input_text: input.and_then(|i| match i.2 {
                        Payload::Text(t) => Some(t.clone()),
                        Payload::Audio(_) => None,
                    }),
                    output_text: out.text.clone(),
                });
            }
            EventBody::DeliveryAck(ack) => {
                if let Some(&r) = record_of_output.get(&ack.output_seq) {
                    records[r].ack_ts.get_or_insert(ev.ts);
                }
            }
            _ => {}
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Nearest-rank 95th percentile.
    pub p95: f64,
    pub max: f64,
}

/// Statistics over input-to-output latency; turns without an input are skipped.
pub fn latency_stats(turns: &[TurnRecord]) -> Result<LatencyStats, AnalysisError> {
    let values: Vec<f64> = turns.iter().filter_map(|t| t.latency_ms()).map(|l| l as f64).collect();
    stats_of(values)
}

pub fn stats_of(mut values: Vec<f64>) -> Result<LatencyStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::NoData("no turns with an input"));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 };
    let rank = (0.95 * n as f64).ceil() as usize;
    Ok(LatencyStats { count: n, mean, median, p95: values[rank.max(1) - 1], max: values[n - 1] })
}

/// Normalised Shannon entropy of utterance usage: 0 when one utterance is
/// always used, 1 when all used utterances are used equally often.
pub fn utterance_spread(turns: &[TurnRecord]) -> Result<f64, AnalysisError> {
    let mut counts: HashMap<&UtteranceId, usize> = HashMap::new();
    for t in turns {
        if let Some(id) = &t.utterance_id {
            *counts.entry(id).or_default() += 1;
        }
    }
    spread_of_counts(&counts.into_values().collect::<Vec<_>>())
}

pub fn spread_of_counts(counts: &[usize]) -> Result<f64, AnalysisError> {
    let counts: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(AnalysisError::NoData("no utterance selections"));
    }
    if counts.len() == 1 {
        return Ok(0.0);
    }
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    Ok((h / (counts.len() as f64).log2()).clamp(0.0, 1.0))
}

/// Lowercase, trim, collapse whitespace and strip terminal punctuation.
pub fn normalize_text(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace()).to_string()
}

/// Mean share of the most frequent response among repeated inputs.
pub fn consistency(turns: &[TurnRecord]) -> Result<f64, AnalysisError> {
    let mut groups: BTreeMap<String, HashMap<String, usize>> = BTreeMap::new();
    for t in turns {
        if let Some(input) = &t.input_text {
            *groups.entry(normalize_text(input)).or_default().entry(normalize_text(&t.output_text)).or_default() += 1;
        }
    }
    let shares: Vec<f64> = groups
        .values()
        .filter_map(|outputs| {
            let size: usize = outputs.values().sum();
            (size >= 2).then(|| *outputs.values().max().expect("non-empty") as f64 / size as f64)
        })
        .collect();
    if shares.is_empty() {
        return Err(AnalysisError::NoData("no repeated inputs"));
    }
    Ok(shares.iter().sum::<f64>() / shares.len() as f64)
}

/// System Usability Scale on the 7-point variant: odd items give r-1, even
/// items 7-r, and the sum is scaled by 5/3 onto 0..=100.
pub fn sus_score(responses: &[u8]) -> Result<f64, AnalysisError> {
    if responses.len() != 10 {
        return Err(AnalysisError::Validation(format!("expected 10 responses, got {}", responses.len())));
    }
    let mut sum = 0u32;
    for (i, &r) in responses.iter().enumerate() {
        if !(1..=7).contains(&r) {
            return Err(AnalysisError::Validation(format!("response {} is {r}, not in 1..=7", i + 1)));
        }
        // Item numbers are 1-based, so even indices are the odd items.
        sum += if i % 2 == 0 { r as u32 - 1 } else { 7 - r as u32 };
    }
    Ok(sum as f64 * 5.0 / 3.0)
}

pub const CSV_HEADER: [&str; 8] =
    ["input_seq", "input_ts", "output_ts", "latency_ms", "utterance_id", "input_text", "output_text", "ack_ts"];

/// Write the turn table as CSV with the fixed column set.
pub fn write_turns_csv<W: Write>(turns: &[TurnRecord], out: W) -> Result<(), AnalysisError> {
    let csv_err = |e: csv::Error| AnalysisError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let opt = |v: Option<i64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in turns {
        w.write_record([
            t.input_seq.map(|s| s.to_string()).unwrap_or_default(),
            opt(t.input_ts.map(|x| x.0)),
            t.output_ts.0.to_string(),
            opt(t.latency_ms()),
            t.utterance_id.as_ref().map(|u| u.to_string()).unwrap_or_default(),
            t.input_text.clone().unwrap_or_default(),
            t.output_text.clone(),
            opt(t.ack_ts.map(|x| x.0)),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| AnalysisError::Csv(e.to_string()))?;
    Ok(())
}

pub fn turns_csv_string(turns: &[TurnRecord]) -> Result<String, AnalysisError> {
    let mut buf = Vec::new();
    write_turns_csv(turns, &mut buf)?;
    String::from_utf8(buf).map_err(|e| AnalysisError::Csv(e.to_string()))
}

/// Per-session summary printed by `ozwoz analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub n_turns: usize,
    pub latency: Option<LatencyStats>,
    pub spread: Option<f64>,
    pub consistency: Option<f64>,
}

pub fn report(session_id: &str, turns: &[TurnRecord]) -> SessionReport {
    SessionReport {
        session_id: session_id.to_string(),
        n_turns: turns.len(),
        latency: latency_stats(turns).ok(),
        spread: utterance_spread(turns).ok(),
        consistency: consistency(turns).ok(),
    }
}
