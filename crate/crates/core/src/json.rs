//! JSON encapsulation of a signed package, used as the size baseline.
//!
//! The layout mirrors the COSE message field for field; binary values are
//! standard padded Base64 and the timestamp is ISO-8601 UTC.

use alloc::{string::String, vec::Vec};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::cert::x5chain_ders;
use crate::cose::CoseSign1Message;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonProtected {
    pub algorithm: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonUnprotected {
    pub timestamp: String,
    pub cert_chain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonPackage {
    pub protected_header: JsonProtected,
    pub unprotected_header: JsonUnprotected,
    pub payload: String,
    pub signature: String,
}

#[derive(Debug, thiserror::Error)]
pub enum JsonError {
    #[error("invalid JSON package: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid base64 in {0}")]
    Base64(&'static str),
}

impl JsonPackage {
    pub fn from_message(m: &CoseSign1Message) -> Self {
        let chain = m
            .unprotected
            .x5chain
            .as_ref()
            .map(|v| x5chain_ders(v).into_iter().map(|d| STANDARD.encode(d)).collect())
            .unwrap_or_default();
        Self {
            protected_header: JsonProtected {
                algorithm: String::from(m.alg().name()),
            },
            unprotected_header: JsonUnprotected {
                timestamp: m.unprotected.timestamp.map(iso8601).unwrap_or_default(),
                cert_chain: chain,
            },
            payload: STANDARD.encode(&m.payload),
            signature: STANDARD.encode(&m.signature),
        }
    }

    pub fn payload_bytes(&self) -> Result<Vec<u8>, JsonError> {
        STANDARD
            .decode(&self.payload)
            .map_err(|_| JsonError::Base64("payload"))
    }

    pub fn signature_bytes(&self) -> Result<Vec<u8>, JsonError> {
        STANDARD
            .decode(&self.signature)
            .map_err(|_| JsonError::Base64("signature"))
    }

    pub fn cert_ders(&self) -> Result<Vec<Vec<u8>>, JsonError> {
        self.unprotected_header
            .cert_chain
            .iter()
            .map(|c| STANDARD.decode(c).map_err(|_| JsonError::Base64("cert_chain")))
            .collect()
    }
}

/// Compact JSON bytes for `m`.
pub fn encapsulate_json(m: &CoseSign1Message) -> Vec<u8> {
    serde_json::to_vec(&JsonPackage::from_message(m)).expect("plain struct serializes")
}

pub fn parse_json(bytes: &[u8]) -> Result<JsonPackage, JsonError> {
    Ok(serde_json::from_slice(bytes)?)
}

/// `2024-01-01T00:00:00Z` style rendering of Unix seconds.
pub fn iso8601(secs: u64) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    match i64::try_from(secs)
        .ok()
        .and_then(|s| chrono::DateTime::from_timestamp(s, 0))
    {
        Some(t) => {
            let _ = write!(s, "{}", t.format("%Y-%m-%dT%H:%M:%SZ"));
        }
        None => {
            let _ = write!(s, "{secs}");
        }
    }
    s
}
