//! Versioned JSON envelope used for every document the pipeline writes
//! (topics, profiles, concept maps, plans, manifests, reports).

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum DocError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed document: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: expected a `{expected}` document, found `{found}`")]
    WrongKind {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: unsupported schema version {found} (this build reads {SCHEMA_VERSION})")]
    Version { path: String, found: u32 },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct Wrapped<'a, T> {
    data: &'a T,
}

#[derive(Deserialize)]
struct Unwrapped<T> {
    data: T,
}

pub fn to_document<T: Serialize>(kind: &str, value: &T) -> String {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        body: Wrapped { data: value },
    };
    let mut s = serde_json::to_string_pretty(&env).expect("document serializes");
    s.push('\n');
    s
}

pub fn from_document<T: DeserializeOwned>(kind: &str, text: &str, path: &str) -> Result<T, DocError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| DocError::Malformed {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    let version = raw.get("schema_version").and_then(Value::as_u64).unwrap_or(0) as u32;
    let found = raw.get("kind").and_then(Value::as_str).unwrap_or("").to_string();
    if found != kind {
        return Err(DocError::WrongKind {
            path: path.to_string(),
            expected: kind.to_string(),
            found,
        });
    }
    if version != SCHEMA_VERSION {
        return Err(DocError::Version {
            path: path.to_string(),
            found: version,
        });
    }
    let env: Envelope<Unwrapped<T>> = serde_json::from_value(raw).map_err(|e| DocError::Malformed {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    Ok(env.body.data)
}

pub fn write_document<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<(), DocError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| DocError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, to_document(kind, value)).map_err(|source| DocError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_document<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, DocError> {
    let text = fs::read_to_string(path).map_err(|source| DocError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_document(kind, &text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_rejects_wrong_kind() {
        let doc = to_document("topic", &vec![1, 2, 3]);
        let back: Vec<i32> = from_document("topic", &doc, "mem").unwrap();
        assert_eq!(back, vec![1, 2, 3]);
        let err = from_document::<Vec<i32>>("profile", &doc, "mem").unwrap_err();
        assert!(matches!(err, DocError::WrongKind { .. }));
    }
}
