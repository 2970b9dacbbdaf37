//! The sixteen input-modality × input-MT × output-MT × output-modality cases.

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, SlotKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputModality {
    Text,
    Asr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputModality {
    Text,
    Tts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignCase {
    pub case_number: u8,
    pub input_modality: InputModality,
    pub input_mt: bool,
    pub output_mt: bool,
    pub output_modality: OutputModality,
    pub example_label: String,
}

use InputModality as In;
use OutputModality as Out;

const CASES: [(u8, In, bool, bool, Out, &str); 16] = [
    (1, In::Text, false, false, Out::Text, "Natural-Language Interfaces"),
    (2, In::Asr, false, false, Out::Text, "Speech Recognition"),
    (3, In::Asr, true, false, Out::Text, "Text-based Feedback"),
    (4, In::Text, true, false, Out::Text, "Text-to-Text Translation"),
    (5, In::Text, false, true, Out::Text, "Text-to-Text Translation"),
    (6, In::Text, false, false, Out::Tts, "Speech-output"),
    (7, In::Text, true, false, Out::Tts, "Multi-lingual Text-to-Speech"),
    (8, In::Text, false, true, Out::Tts, "Multi-lingual Text-to-Speech"),
    (9, In::Asr, true, true, Out::Tts, "Less common"),
    (10, In::Text, true, true, Out::Text, "Less common"),
    (11, In::Asr, true, true, Out::Text, "Less common"),
    (12, In::Text, true, true, Out::Tts, "Less common"),
    (13, In::Asr, true, false, Out::Tts, "Speech-to-Speech Translation"),
    (14, In::Asr, false, true, Out::Tts, "Speech-to-Speech Translation"),
    (15, In::Asr, false, false, Out::Tts, "In-Car Voice Control"),
    (16, In::Asr, false, true, Out::Text, "Multi-lingual Inf. Retrieval"),
];

/// All sixteen cases in their conventional row order.
pub fn enumerate_design_space() -> Vec<DesignCase> {
    CASES
        .iter()
        .map(|&(case_number, input_modality, input_mt, output_mt, output_modality, label)| DesignCase {
            case_number,
            input_modality,
            input_mt,
            output_mt,
            output_modality,
            example_label: label.to_string(),
        })
        .collect()
}

/// Case number for the config's modality and MT presence, ignoring modes.
///
/// Returns `None` only when the config has no single input or output
/// modality.
pub fn classify(config: &PipelineConfig) -> Option<u8> {
    let active = |k: SlotKind| config.mode(k).is_active();
    let input = match (active(SlotKind::TextIn), active(SlotKind::Asr)) {
        (true, false) => In::Text,
        (false, true) => In::Asr,
        _ => return None,
    };
    let output = match (active(SlotKind::TextOut), active(SlotKind::Tts)) {
        (true, false) => Out::Text,
        (false, true) => Out::Tts,
        _ => return None,
    };
    let (input_mt, output_mt) = (active(SlotKind::InputMt), active(SlotKind::OutputMt));
    CASES
        .iter()
        .find(|c| c.1 == input && c.2 == input_mt && c.3 == output_mt && c.4 == output)
        .map(|c| c.0)
}
