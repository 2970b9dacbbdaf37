//! Deterministic error and delay injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationProfile {
    #[serde(default)]
    pub substitution_rate: f64,
    #[serde(default)]
    pub deletion_rate: f64,
    #[serde(default)]
    pub fixed_delay_ms: u64,
    #[serde(default)]
    pub jitter_ms: u64,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationProfile {
    pub fn rates(substitution_rate: f64, deletion_rate: f64, seed: u64) -> Self {
        Self { substitution_rate, deletion_rate, fixed_delay_ms: 0, jitter_ms: 0, seed }
    }

    pub fn delay(fixed_delay_ms: u64, jitter_ms: u64, seed: u64) -> Self {
        Self { substitution_rate: 0.0, deletion_rate: 0.0, fixed_delay_ms, jitter_ms, seed }
    }

    pub fn check(&self) -> Result<(), String> {
        let in_unit = |r: f64| (0.0..=1.0).contains(&r);
        if !in_unit(self.substitution_rate) || !in_unit(self.deletion_rate) {
            return Err("rates must lie in [0, 1]".into());
        }
        if self.substitution_rate + self.deletion_rate > 1.0 + 1e-12 {
            return Err("substitution_rate + deletion_rate exceeds 1".into());
        }
        Ok(())
    }

    pub fn alters_text(&self) -> bool {
        self.substitution_rate > 0.0 || self.deletion_rate > 0.0
    }

    /// Same profile with the seed mixed with `salt` (e.g. a turn position),
    /// so repeated invocations draw independent but reproducible streams.
    pub fn salted(&self, salt: u64) -> Self {
        let mut p = self.clone();
        p.seed = mix(self.seed, salt);
        p
    }
}

// splitmix64 finaliser
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Substitutes, grouped by character length. Each length has at least two
/// entries so a substitute always differs from the original token.
const CONFUSIONS: &[&str] = &[
    "a", "i", "o", "at", "in", "on", "to", "of", "or", "the", "can", "cat", "for", "bat", "bed", "that",
    "what", "when", "book", "cook", "look", "fight", "right", "night", "light", "flight", "bright", "plight",
    "station", "traffic", "creation", "relation", "elevation", "education", "revelation", "conclusion",
];
const LONGEST: usize = 10;

fn substitute(token: &str, rng: &mut impl Rng) -> String {
    let len = token.chars().count();
    // Longer tokens: repeat a longest entry out to the token's length.
    let pool: Vec<String> = CONFUSIONS
        .iter()
        .filter(|w| w.chars().count() == len.min(LONGEST))
        .map(|w| w.chars().cycle().take(len).collect::<String>())
        .filter(|w| !w.eq_ignore_ascii_case(token))
        .collect();
    pool[rng.random_range(0..pool.len())].clone()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DegradeOutcome {
    pub text: String,
    pub tokens: usize,
    pub substituted: usize,
    pub deleted: usize,
}

/// Degrade with the profile's own seed.
pub fn degrade_text(text: &str, profile: &DegradationProfile) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    degrade_text_with(text, profile, &mut rng).text
}

/// Per whitespace-delimited token: substitute with probability
/// `substitution_rate`, else delete with probability `deletion_rate`.
/// Whitespace around surviving tokens is kept as written.
pub fn degrade_text_with(text: &str, profile: &DegradationProfile, rng: &mut impl Rng) -> DegradeOutcome {
    let mut out = DegradeOutcome::default();
    let trimmed_start = text.trim_start();
    let leading = &text[..text.len() - trimmed_start.len()];
    let mut rest = trimmed_start;
    let mut emitted = false;
    let mut gap = leading;
    while !rest.is_empty() {
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let token = &rest[..end];
        let after = &rest[end..];
        let next = after.trim_start();
        let following_gap = &after[..after.len() - next.len()];

        out.tokens += 1;
        let u: f64 = rng.random();
        let replacement = if u < profile.substitution_rate {
            out.substituted += 1;
            Some(substitute(token, rng))
        } else if u < profile.substitution_rate + profile.deletion_rate {
            out.deleted += 1;
            None
        } else {
            Some(token.to_string())
        };
        if let Some(word) = replacement {
            out.text.push_str(if emitted { gap } else { leading });
            out.text.push_str(&word);
            emitted = true;
        }
        gap = following_gap;
        rest = next;
    }
    out.text.push_str(if emitted { gap } else { "" });
    if !emitted {
        // Nothing survived (or empty input): keep the original whitespace only.
        out.text = if out.tokens == 0 { text.to_string() } else { String::new() };
    }
    out
}

/// `fixed_delay_ms + u`, `u` uniform in `[0, jitter_ms]`.
pub fn degrade_delay(profile: &DegradationProfile, rng: &mut impl Rng) -> u64 {
    let jitter = if profile.jitter_ms == 0 { 0 } else { rng.random_range(0..=profile.jitter_ms) };
    profile.fixed_delay_ms + jitter
}
