//! Versioned JSON envelopes for everything the CLI writes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "selclass";

/// A serialisable result type with a stable `kind` tag.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'static str,
    version: u32,
    kind: &'static str,
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    format: String,
    version: u32,
    kind: String,
    payload: serde_json::Value,
}

pub fn to_json<T: Artifact>(value: &T) -> Result<String> {
    let env = EnvelopeOut {
        format: FORMAT_NAME,
        version: FORMAT_VERSION,
        kind: T::KIND,
        payload: value,
    };
    let mut s = serde_json::to_string_pretty(&env)
        .map_err(|e| Error::param(format!("cannot serialise {}: {e}", T::KIND)))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: Artifact>(text: &str) -> Result<T> {
    let env: EnvelopeIn = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {}", e.line()), e.to_string()))?;
    if env.format != FORMAT_NAME {
        return Err(Error::parse("format", format!("not a {FORMAT_NAME} file: '{}'", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: env.version,
            expected: FORMAT_VERSION,
        });
    }
    if env.kind != T::KIND {
        return Err(Error::parse(
            "kind",
            format!("expected a {} file, found '{}'", T::KIND, env.kind),
        ));
    }
    serde_json::from_value(env.payload).map_err(|e| Error::parse("payload", e.to_string()))
}

pub fn save_artifact<T: Artifact>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    save_text(&to_json(value)?, path)
}

pub fn load_artifact<T: Artifact>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Parse { location, reason } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            reason,
        },
        other => other,
    })
}

pub fn save_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
