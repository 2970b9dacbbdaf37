//! Canonical JSON: object keys sorted lexicographically, UTF-8, no
//! insignificant whitespace. Used for persisted documents and for digests.

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Recursively rebuild `value` with sorted object keys.
pub fn canonicalize(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonicalize(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Value> {
    serde_json::to_value(value).map(canonicalize)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = to_canonical_value(value)?;
    // serde_json writes compactly; with sorted keys this is the canonical form.
    serde_json::to_string(&value)
}

/// Stable 64-bit content digest: first 8 bytes (big-endian) of SHA-256 over
/// the canonical serialization.
pub fn digest64<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<u64> {
    let text = to_canonical_string(value)?;
    Ok(digest64_bytes(text.as_bytes()))
}

pub fn digest64_bytes(bytes: &[u8]) -> u64 {
    let hash = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&hash[..8]);
    u64::from_be_bytes(head)
}
