//! Mode rules between consecutive components, and wizard-task derivation.
//!
//! Rules are evaluated over the *active* (non-off) slots in pipeline order:
//!
//! - R1: a black-box slot may neighbour slots in any mode (no check needed).
//! - R2: a maximal run of simulating slots must be followed by a black-box
//!   slot, or reach the participant-facing sink.
//! - R3/R4: consecutive simulations merge, and simulations following a
//!   correction merge with it. These shape [`derive_wizard_tasks`].
//! - R5: a correcting slot's nearest active predecessor is black-box, or the
//!   correcting slot receives participant input directly.
//!
//! Modality checks (M1-M4) come first: one input and one output modality,
//! machine translation with a language pair, typed input is always black-box.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ComponentMode, ComponentSlot, PipelineConfig, SlotKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "M1")]
    InputModality,
    #[serde(rename = "M2")]
    OutputModality,
    #[serde(rename = "M3")]
    MtLanguagePair,
    #[serde(rename = "M4")]
    PlainInput,
    #[serde(rename = "R2")]
    SimulationSuccessor,
    #[serde(rename = "R5")]
    CorrectionPredecessor,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::InputModality => "M1",
            Rule::OutputModality => "M2",
            Rule::MtLanguagePair => "M3",
            Rule::PlainInput => "M4",
            Rule::SimulationSuccessor => "R2",
            Rule::CorrectionPredecessor => "R5",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub rule: Rule,
    /// Offending slot; `None` for pipeline-wide modality rules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<SlotKind>,
    pub message: String,
}

impl fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(slot) => write!(f, "{} at {}: {}", self.rule, slot, self.message),
            None => write!(f, "{}: {}", self.rule, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Simulate,
    Correct,
}

/// A contiguous span of simulated/corrected slots handled by the wizard as
/// one unit of work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WizardTask {
    pub kind: TaskKind,
    pub span: Vec<SlotKind>,
}

impl WizardTask {
    pub fn first(&self) -> SlotKind {
        self.span[0]
    }

    pub fn last(&self) -> SlotKind {
        self.span[self.span.len() - 1]
    }

    pub fn covers(&self, kind: SlotKind) -> bool {
        self.span.contains(&kind)
    }
}

impl fmt::Display for WizardTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = match self.kind {
            TaskKind::Simulate => "SIMULATE",
            TaskKind::Correct => "CORRECT",
        };
        let span: Vec<&str> = self.span.iter().map(|k| k.label()).collect();
        write!(f, "{verb} {}", span.join("+"))
    }
}

fn violation(rule: Rule, slot: Option<SlotKind>, message: impl Into<String>) -> RuleViolation {
    RuleViolation { rule, slot, message: message.into() }
}

fn modality_violations(config: &PipelineConfig) -> Vec<RuleViolation> {
    use ComponentMode::*;
    let mut out = Vec::new();
    let text_in = config.mode(SlotKind::TextIn).is_active();
    let asr = config.mode(SlotKind::Asr).is_active();
    if text_in == asr {
        out.push(violation(Rule::InputModality, None, "exactly one of TextIn and ASR must be active"));
    }
    let tts = config.mode(SlotKind::Tts).is_active();
    let text_out = config.mode(SlotKind::TextOut).is_active();
    if tts == text_out {
        out.push(violation(Rule::OutputModality, None, "exactly one of TTS and TextOut must be active"));
    }
    for kind in [SlotKind::InputMt, SlotKind::OutputMt] {
        let slot = config.slot(kind);
        if !slot.mode.is_active() {
            continue;
        }
        match (&slot.settings.source_language, &slot.settings.target_language) {
            (Some(s), Some(t)) if s.same_language(t) => {
                out.push(violation(Rule::MtLanguagePair, Some(kind), "source and target language are equal"))
            }
            (Some(_), Some(_)) => {}
            _ => out.push(violation(
                Rule::MtLanguagePair,
                Some(kind),
                "machine translation needs source_language and target_language",
            )),
        }
    }
    let text_in_mode = config.mode(SlotKind::TextIn);
    if !matches!(text_in_mode, Off | BlackBox) {
        out.push(violation(Rule::PlainInput, Some(SlotKind::TextIn), "typed input can only be on or off"));
    }
    out
}

fn rule_violations(active: &[&ComponentSlot]) -> Vec<RuleViolation> {
    use ComponentMode::*;
    let mut out = Vec::new();
    for (i, slot) in active.iter().enumerate() {
        let next = active.get(i + 1).map(|s| s.mode);
        if slot.mode == Simulating && !matches!(next, None | Some(Simulating) | Some(BlackBox)) {
            out.push(violation(
                Rule::SimulationSuccessor,
                Some(slot.kind),
                "a simulated component must be followed by a working component",
            ));
        }
        if slot.mode == Correcting && i > 0 && active[i - 1].mode != BlackBox {
            out.push(violation(
                Rule::CorrectionPredecessor,
                Some(slot.kind),
                "a corrected component needs a working predecessor or direct participant input",
            ));
        }
    }
    out
}

/// `Ok(())` iff every modality and mode rule holds.
pub fn validate(config: &PipelineConfig) -> Result<(), Vec<RuleViolation>> {
    let mut out = modality_violations(config);
    let active: Vec<&ComponentSlot> = config.active().collect();
    out.extend(rule_violations(&active));
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Wizard tasks in pipeline order. Fails with the violations when the
/// config does not validate.
pub fn derive_wizard_tasks(config: &PipelineConfig) -> Result<Vec<WizardTask>, Vec<RuleViolation>> {
    use ComponentMode::*;
    validate(config)?;
    let active: Vec<&ComponentSlot> = config.active().collect();
    let mut tasks = Vec::new();
    let mut i = 0;
    while i < active.len() {
        match active[i].mode {
            Simulating => {
                let start = i;
                while i < active.len() && active[i].mode == Simulating {
                    i += 1;
                }
                tasks.push(WizardTask {
                    kind: TaskKind::Simulate,
                    span: active[start..i].iter().map(|s| s.kind).collect(),
                });
            }
            Correcting => {
                let start = i;
                i += 1;
                if active.get(i).is_some_and(|s| s.mode == Simulating) {
                    while i < active.len() && active[i].mode == Simulating {
                        i += 1;
                    }
                    tasks.push(WizardTask {
                        kind: TaskKind::Simulate,
                        span: active[start..i].iter().map(|s| s.kind).collect(),
                    });
                } else {
                    tasks.push(WizardTask { kind: TaskKind::Correct, span: vec![active[start].kind] });
                }
            }
            BlackBox | Off => i += 1,
        }
    }
    Ok(tasks)
}
