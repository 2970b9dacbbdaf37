//! The language-technology interaction pipeline.
//!
//! A pipeline is a fixed chain of seven slots:
//! `TextIn | ASR → InputMT → DM → OutputMT → TTS | TextOut`.
//! Each slot is in one of four modes. The rules in [`rules`] decide which
//! mode assignments a single wizard can operate and how simulated or
//! corrected slots merge into wizard tasks.

mod design_space;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use design_space::{classify, enumerate_design_space, DesignCase, InputModality, OutputModality};
pub use rules::{derive_wizard_tasks, validate, Rule, RuleViolation, TaskKind, WizardTask};

use crate::adapters::DegradationProfile;
use crate::ids::LanguageTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    TextIn,
    Asr,
    InputMt,
    Dm,
    OutputMt,
    Tts,
    TextOut,
}

impl SlotKind {
    /// Pipeline order.
    pub const ALL: [SlotKind; 7] = [
        SlotKind::TextIn,
        SlotKind::Asr,
        SlotKind::InputMt,
        SlotKind::Dm,
        SlotKind::OutputMt,
        SlotKind::Tts,
        SlotKind::TextOut,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Plain participant I/O, not a language technology.
    pub fn is_plain_io(self) -> bool {
        matches!(self, SlotKind::TextIn | SlotKind::TextOut)
    }

    pub fn is_mt(self) -> bool {
        matches!(self, SlotKind::InputMt | SlotKind::OutputMt)
    }

    pub fn label(self) -> &'static str {
        match self {
            SlotKind::TextIn => "TextIn",
            SlotKind::Asr => "ASR",
            SlotKind::InputMt => "InputMT",
            SlotKind::Dm => "DM",
            SlotKind::OutputMt => "OutputMT",
            SlotKind::Tts => "TTS",
            SlotKind::TextOut => "TextOut",
        }
    }
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentMode {
    #[default]
    Off,
    /// Production-quality component, used as is ("ON").
    BlackBox,
    /// Component runs; the wizard post-edits or picks from its output.
    Correcting,
    /// Component is absent; the wizard replaces it.
    Simulating,
}

impl ComponentMode {
    pub const ALL: [ComponentMode; 4] =
        [ComponentMode::Off, ComponentMode::BlackBox, ComponentMode::Correcting, ComponentMode::Simulating];

    pub fn is_active(self) -> bool {
        self != ComponentMode::Off
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_language: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_language: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub nbest: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbest_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<DegradationProfile>,
}

impl SlotSettings {
    pub const DEFAULT_TIMEOUT_MS: u64 = 5_000;

    pub fn timeout_ms(&self) -> u64 {
        self.timeout_ms.unwrap_or(Self::DEFAULT_TIMEOUT_MS)
    }

    pub fn nbest_size(&self) -> u32 {
        if self.nbest {
            self.nbest_size.unwrap_or(5).max(1)
        } else {
            1
        }
    }

    pub fn adapter(id: &str) -> Self {
        Self { adapter: Some(id.to_string()), ..Self::default() }
    }

    pub fn with_language(mut self, language: &str) -> Self {
        self.language = Some(language.into());
        self
    }

    pub fn with_languages(mut self, source: &str, target: &str) -> Self {
        self.source_language = Some(source.into());
        self.target_language = Some(target.into());
        self
    }

    pub fn with_nbest(mut self, size: u32) -> Self {
        self.nbest = true;
        self.nbest_size = Some(size);
        self
    }

    pub fn with_timeout(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = Some(timeout_ms);
        self
    }

    pub fn with_degradation(mut self, profile: DegradationProfile) -> Self {
        self.degradation = Some(profile);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSlot {
    pub kind: SlotKind,
    #[serde(default)]
    pub mode: ComponentMode,
    #[serde(default)]
    pub settings: SlotSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineShapeError {
    #[error("slot {0} listed more than once")]
    Duplicate(SlotKind),
    #[error("slot {0} is out of pipeline order")]
    OutOfOrder(SlotKind),
}

/// Slots in fixed pipeline order; absent slots are `Off`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPipeline")]
pub struct PipelineConfig {
    slots: Vec<ComponentSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_number: Option<u8>,
}

#[derive(Deserialize)]
struct RawPipeline {
    #[serde(default)]
    slots: Vec<ComponentSlot>,
    #[serde(default)]
    case_number: Option<u8>,
}

impl TryFrom<RawPipeline> for PipelineConfig {
    type Error = PipelineShapeError;

    fn try_from(raw: RawPipeline) -> Result<Self, Self::Error> {
        let mut config = PipelineConfig::off();
        config.case_number = raw.case_number;
        let mut last: Option<SlotKind> = None;
        for slot in raw.slots {
            if let Some(prev) = last {
                if prev == slot.kind {
                    return Err(PipelineShapeError::Duplicate(slot.kind));
                }
                if prev > slot.kind {
                    return Err(PipelineShapeError::OutOfOrder(slot.kind));
                }
            }
            last = Some(slot.kind);
            let idx = slot.kind.index();
            config.slots[idx] = slot;
        }
        Ok(config)
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::off()
    }
}

impl PipelineConfig {
    /// Every slot off. Not valid on its own.
    pub fn off() -> Self {
        Self {
            slots: SlotKind::ALL
                .iter()
                .map(|&kind| ComponentSlot { kind, mode: ComponentMode::Off, settings: SlotSettings::default() })
                .collect(),
            case_number: None,
        }
    }

    /// Text in, simulated dialogue management, text out (design-space case 1).
    pub fn text_chat() -> Self {
        Self::off()
            .with(SlotKind::TextIn, ComponentMode::BlackBox)
            .with(SlotKind::Dm, ComponentMode::Simulating)
            .with(SlotKind::TextOut, ComponentMode::BlackBox)
    }

    pub fn from_modes(modes: &[(SlotKind, ComponentMode)]) -> Self {
        modes.iter().fold(Self::off(), |c, &(k, m)| c.with(k, m))
    }

    pub fn with(mut self, kind: SlotKind, mode: ComponentMode) -> Self {
        self.slots[kind.index()].mode = mode;
        self
    }

    pub fn with_settings(mut self, kind: SlotKind, settings: SlotSettings) -> Self {
        self.slots[kind.index()].settings = settings;
        self
    }

    pub fn slots(&self) -> &[ComponentSlot] {
        &self.slots
    }

    pub fn slot(&self, kind: SlotKind) -> &ComponentSlot {
        &self.slots[kind.index()]
    }

    pub fn slot_mut(&mut self, kind: SlotKind) -> &mut ComponentSlot {
        &mut self.slots[kind.index()]
    }

    pub fn mode(&self, kind: SlotKind) -> ComponentMode {
        self.slots[kind.index()].mode
    }

    pub fn set_mode(&mut self, kind: SlotKind, mode: ComponentMode) {
        self.slots[kind.index()].mode = mode;
    }

    /// Non-off slots in pipeline order.
    pub fn active(&self) -> impl Iterator<Item = &ComponentSlot> {
        self.slots.iter().filter(|s| s.mode.is_active())
    }
}
