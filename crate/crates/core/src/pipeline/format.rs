//! Canonical artifact encoding.
//!
//! Artifacts are pretty-printed JSON with sorted keys, a `schema_version`
//! field and every real rounded to 9 significant digits, except values
//! under a `weights` key which keep full round-trip precision so that
//! reloaded weight vectors stay on the simplex.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PipelineError, Stage};

pub const SCHEMA_VERSION: u32 = 1;
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant decimal digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("scientific notation parses")
}

/// Shortest decimal text of [`round_sig`]`(x)`.
pub fn format_sig(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        return "0".into();
    }
    format!("{r}")
}

fn canonicalize(value: Value, exact: bool) -> Value {
    match value {
        Value::Number(n) if !exact && n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => {
            Value::Array(items.into_iter().map(|v| canonicalize(v, exact)).collect())
        }
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let keep = exact || k == "weights";
                    (k, canonicalize(v, keep))
                })
                .collect(),
        ),
        other => other,
    }
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct RawEnvelope {
    schema_version: u32,
    kind: String,
    #[serde(flatten)]
    body: Value,
}

/// Serializes `body` into the canonical artifact text tagged with `kind`.
pub fn to_artifact_string<T: Serialize>(kind: &str, body: &T) -> Result<String, PipelineError> {
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        kind,
        body,
    };
    let value = serde_json::to_value(&envelope).map_err(|e| PipelineError::encode(kind, e))?;
    let mut text = serde_json::to_string_pretty(&canonicalize(value, false))
        .map_err(|e| PipelineError::encode(kind, e))?;
    text.push('\n');
    Ok(text)
}

pub fn from_artifact_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, PipelineError> {
    let raw: RawEnvelope =
        serde_json::from_str(text).map_err(|e| PipelineError::decode(kind, e))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(PipelineError::validation(
            Stage::Load,
            format!("{kind}: unsupported schema_version {}", raw.schema_version),
        ));
    }
    if raw.kind != kind {
        return Err(PipelineError::validation(
            Stage::Load,
            format!("expected a `{kind}` artifact, found `{}`", raw.kind),
        ));
    }
    serde_json::from_value(raw.body).map_err(|e| PipelineError::decode(kind, e))
}

pub fn write_artifact<T: Serialize>(
    path: &Path,
    kind: &str,
    body: &T,
) -> Result<(), PipelineError> {
    let text = to_artifact_string(kind, body)?;
    std::fs::write(path, text).map_err(|e| PipelineError::write(path, e))
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::read(path, e))?;
    from_artifact_str(kind, &text)
}
