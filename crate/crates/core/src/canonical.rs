//! The one serialized form used on the wire, on disk, and in reports.
//!
//! UTF-8 JSON, object keys sorted by byte order, no insignificant
//! whitespace, integers in plain base 10, every string in NFC. Decoding
//! accepts only bytes that re-encode to themselves.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use unicode_normalization::{is_nfc, UnicodeNormalization};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonicalError {
    #[error("MALFORMED: {0}")]
    Malformed(String),
    #[error("NON_CANONICAL: {0}")]
    NonCanonical(String),
    #[error("SCHEMA_VIOLATION: {0}")]
    SchemaViolation(String),
}

impl CanonicalError {
    pub fn code(&self) -> &'static str {
        match self {
            CanonicalError::Malformed(_) => "MALFORMED",
            CanonicalError::NonCanonical(_) => "NON_CANONICAL",
            CanonicalError::SchemaViolation(_) => "SCHEMA_VIOLATION",
        }
    }
}

/// Encodes any serializable value canonically. Strings are NFC-normalized.
pub fn to_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    value_to_bytes(&v)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_bytes(value)).expect("canonical output is UTF-8")
}

pub fn value_to_bytes(v: &Value) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    write_value(v, &mut out, true);
    out
}

fn write_str(s: &str, out: &mut Vec<u8>, nfc: bool) {
    if nfc && !is_nfc(s) {
        let composed: String = s.nfc().collect();
        serde_json::to_writer(&mut *out, &composed).expect("write to Vec");
    } else {
        serde_json::to_writer(&mut *out, s).expect("write to Vec");
    }
}

fn write_value(v: &Value, out: &mut Vec<u8>, nfc: bool) {
    match v {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => serde_json::to_writer(&mut *out, n).expect("write to Vec"),
        Value::String(s) => write_str(s, out, nfc),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out, nfc);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (k, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_str(k, out, nfc);
                out.push(b':');
                write_value(item, out, nfc);
            }
            out.push(b'}');
        }
    }
}

fn first_non_nfc(v: &Value) -> Option<&str> {
    match v {
        Value::String(s) => (!is_nfc(s)).then_some(s.as_str()),
        Value::Array(items) => items.iter().find_map(first_non_nfc),
        Value::Object(map) => map.iter().find_map(|(k, item)| {
            if !is_nfc(k) {
                Some(k.as_str())
            } else {
                first_non_nfc(item)
            }
        }),
        _ => None,
    }
}

/// Parses canonical bytes into a JSON value, rejecting any other form.
pub fn parse_value(bytes: &[u8]) -> Result<Value, CanonicalError> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    if let Some(s) = first_non_nfc(&value) {
        return Err(CanonicalError::NonCanonical(format!("string {s:?} is not NFC")));
    }
    let mut again = Vec::with_capacity(bytes.len());
    write_value(&value, &mut again, false);
    if again != bytes {
        return Err(CanonicalError::NonCanonical(first_difference(bytes, &again)));
    }
    Ok(value)
}

/// Decodes canonical bytes into `T`.
///
/// Besides the textual form, the typed value must re-encode to the exact
/// input, which rejects e.g. unsorted set arrays or explicit nulls for
/// omitted fields.
pub fn from_bytes<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let value = parse_value(bytes)?;
    let typed: T =
        serde_json::from_value(value).map_err(|e| CanonicalError::SchemaViolation(e.to_string()))?;
    let again = to_bytes(&typed);
    if again != bytes {
        return Err(CanonicalError::NonCanonical(first_difference(bytes, &again)));
    }
    Ok(typed)
}

fn first_difference(input: &[u8], canonical: &[u8]) -> String {
    let at = input
        .iter()
        .zip(canonical)
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| input.len().min(canonical.len()));
    format!("input departs from canonical form at byte {at}")
}
