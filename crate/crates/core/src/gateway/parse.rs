use std::fmt;

use serde_json::{Map, Value};

use super::{LabelSpace, ModelVerdict, TaskSpec, VerdictStatus};
use crate::taxonomy::normalize_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    Unparseable,
    Schema,
    LabelOutOfSpace,
}

impl FormatErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatErrorKind::Unparseable => "unparseable",
            FormatErrorKind::Schema => "schema",
            FormatErrorKind::LabelOutOfSpace => "label-out-of-space",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub message: String,
}

impl FormatError {
    fn new(kind: FormatErrorKind, message: impl Into<String>) -> Self {
        FormatError { kind, message: message.into() }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.message)
    }
}

impl std::error::Error for FormatError {}

/// End index (inclusive) of the balanced `{...}` starting at `start`,
/// skipping braces inside JSON strings.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset);
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced `{...}` span in `raw` that parses as a JSON object.
pub fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    for (start, _) in raw.match_indices('{') {
        let Some(end) = balanced_end(bytes, start) else { continue };
        if let Ok(Value::Object(map)) = serde_json::from_str(&raw[start..=end]) {
            return Some(map);
        }
    }
    None
}

/// Validates a raw model response into a labeled verdict.
///
/// On closed tasks the returned label is the matching task label; on open
/// tasks it is the normalized proposal.
pub fn parse_verdict(raw: &str, task: &TaskSpec, model: &str, item: &str) -> Result<ModelVerdict, FormatError> {
    use FormatErrorKind::*;

    let obj = extract_object(raw).ok_or_else(|| FormatError::new(Unparseable, "no JSON object found"))?;

    let label = match obj.get("label") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(FormatError::new(Schema, "\"label\" must be a string")),
        None => return Err(FormatError::new(Schema, "missing \"label\"")),
    };
    let confidence = match obj.get("confidence") {
        Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
        Some(_) => return Err(FormatError::new(Schema, "\"confidence\" must be a number")),
        None => return Err(FormatError::new(Schema, "missing \"confidence\"")),
    };
    if !(0.0..=1.0).contains(&confidence) {
        return Err(FormatError::new(Schema, format!("confidence {confidence} outside [0, 1]")));
    }
    let reasoning = match obj.get("reasoning") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(FormatError::new(Schema, "\"reasoning\" must be a string")),
        None => return Err(FormatError::new(Schema, "missing \"reasoning\"")),
    };

    let normalized = normalize_label(label).map_err(|_| FormatError::new(Schema, "\"label\" is empty"))?;
    let label = match &task.labels {
        LabelSpace::Open => normalized,
        LabelSpace::Closed(_) => task
            .labels
            .match_closed(&normalized)
            .map(str::to_string)
            .ok_or_else(|| FormatError::new(LabelOutOfSpace, format!("{normalized:?} is not a task label")))?,
    };

    Ok(ModelVerdict {
        model: model.to_string(),
        item: item.to_string(),
        status: VerdictStatus::Labeled,
        label: Some(label),
        confidence: Some(confidence),
        reasoning: reasoning.clone(),
        attempts: 1,
        raw: raw.to_string(),
    })
}
