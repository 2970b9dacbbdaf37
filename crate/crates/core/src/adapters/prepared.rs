//! Pre-translated text and pre-recorded audio stored on utterances.

use crate::ids::{AssetRef, LanguageTag};
use crate::model::Utterance;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedOutput {
    pub language: LanguageTag,
    pub text: Option<String>,
    pub audio: Option<AssetRef>,
}

fn find<'a, V>(map: &'a std::collections::BTreeMap<LanguageTag, V>, lang: &LanguageTag) -> Option<(&'a LanguageTag, &'a V)> {
    map.get_key_value(lang).or_else(|| map.iter().find(|(k, _)| k.same_language(lang)))
}

/// Stored translation and/or recording of `utterance` for `target`, if any.
/// Never calls a live component.
pub fn lookup_prepared(utterance: &Utterance, target: &LanguageTag) -> Option<PreparedOutput> {
    let text = find(&utterance.pretranslations, target);
    let audio = find(&utterance.prerecorded_audio, target);
    let language = text.map(|t| t.0).or(audio.map(|a| a.0))?.clone();
    Some(PreparedOutput { language, text: text.map(|t| t.1.clone()), audio: audio.map(|a| a.1.clone()) })
}
