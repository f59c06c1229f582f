//! Versioned JSON envelopes for nodes, hierarchies and classifier models.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so a save/load cycle is lossless.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Node,
    Hierarchy,
    Mlp,
    Ensemble,
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    format: &'static str,
    version: u32,
    kind: Kind,
    payload: &'a T,
}

#[derive(Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: Kind,
    payload: T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: Kind,
}

const FORMAT_TAG: &str = "destin-snapshot";

pub fn to_json<T: Serialize>(kind: Kind, payload: &T) -> Result<String> {
    Ok(serde_json::to_string(&EnvelopeRef {
        format: FORMAT_TAG,
        version: FORMAT_VERSION,
        kind,
        payload,
    })?)
}

pub fn from_json<T: DeserializeOwned>(kind: Kind, text: &str) -> Result<T> {
    let found = peek_kind(text)?;
    if found != kind {
        return Err(Error::Snapshot(format!("expected a {kind:?} snapshot, found {found:?}")));
    }
    let env: Envelope<T> = serde_json::from_str(text)
        .map_err(|e| Error::Snapshot(format!("corrupt {kind:?} snapshot: {e}")))?;
    debug_assert_eq!(env.format, FORMAT_TAG);
    debug_assert_eq!(env.kind, kind);
    let _ = env.version;
    Ok(env.payload)
}

/// Reads only the envelope header, validating tag and version.
pub fn peek_kind(text: &str) -> Result<Kind> {
    let header: Header = serde_json::from_str(text)
        .map_err(|e| Error::Snapshot(format!("not a snapshot: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(Error::Snapshot(format!("unknown format tag '{}'", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Snapshot(format!(
            "version {} not supported (this build reads version {FORMAT_VERSION})",
            header.version
        )));
    }
    Ok(header.kind)
}

pub fn write_file<T: Serialize>(path: &std::path::Path, kind: Kind, payload: &T) -> Result<()> {
    let text = to_json(kind, payload)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_file<T: DeserializeOwned>(path: &std::path::Path, kind: Kind) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(kind, &text)
}
