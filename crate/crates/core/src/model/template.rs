//! Slot templates: `{name}` placeholders, `{{` and `}}` for literal braces.

use std::collections::BTreeMap;

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment<'a> {
    Literal(String),
    Slot(&'a str),
}

fn parse(template: &str) -> Result<Vec<Segment<'_>>, ModelError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = template;
    while let Some(c) = rest.chars().next() {
        match c {
            '{' if rest.starts_with("{{") => {
                literal.push('{');
                rest = &rest[2..];
            }
            '}' if rest.starts_with("}}") => {
                literal.push('}');
                rest = &rest[2..];
            }
            '{' => {
                let Some(end) = rest.find('}') else {
                    return Err(ModelError::Validation(format!(
                        "unclosed slot in template {template:?}"
                    )));
                };
                let name = &rest[1..end];
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(ModelError::Validation(format!(
                        "invalid slot name {name:?} in template {template:?}"
                    )));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(name));
                rest = &rest[end + 1..];
            }
            '}' => {
                return Err(ModelError::Validation(format!(
                    "unbalanced '}}' in template {template:?}"
                )));
            }
            _ => {
                literal.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Slot names in order of first appearance.
pub fn slot_names(template: &str) -> Result<Vec<String>, ModelError> {
    let mut names: Vec<String> = Vec::new();
    for seg in parse(template)? {
        if let Segment::Slot(name) = seg {
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
    }
    Ok(names)
}

/// Check that `template` parses.
pub fn check_template(template: &str) -> Result<(), ModelError> {
    parse(template).map(|_| ())
}

/// Substitute every `{name}` with `bindings[name]`.
///
/// Fails with [`ModelError::MissingBinding`] on the first slot (left to right)
/// that has no binding.
pub fn render_template(
    template: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<String, ModelError> {
    let mut out = String::with_capacity(template.len());
    for seg in parse(template)? {
        match seg {
            Segment::Literal(s) => out.push_str(&s),
            Segment::Slot(name) => match bindings.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(ModelError::MissingBinding(name.to_string())),
            },
        }
    }
    Ok(out)
}
