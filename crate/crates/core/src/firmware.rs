//! Firmware payload format and the packaging pipeline.
//!
//! The COSE payload is the deterministic CBOR map
//! `{"fw": bstr, "digest": bstr(32), "version": tstr}` where `digest` is the
//! SHA-256 of `fw`.

use alloc::{string::String, vec::Vec};

use crate::cbor::{self, write_head, CborError, CborValue};
use crate::cert::CertificateChain;
use crate::cose::{self, CoseError, CoseSign1Message, ProtectedHeader, UnprotectedHeader};
use crate::crypto::{sha256, KeyPair, SigningAlgorithm};

const KEY_FW: &str = "fw";
const KEY_DIGEST: &str = "digest";
const KEY_VERSION: &str = "version";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("malformed payload CBOR: {0}")]
    Cbor(#[from] CborError),
    #[error("embedded digest does not match the firmware")]
    DigestMismatch,
    #[error("version string is empty")]
    EmptyVersion,
}

/// Firmware bytes with their version and SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwarePackage {
    firmware: Vec<u8>,
    version: String,
    digest: [u8; 32],
}

impl FirmwarePackage {
    pub fn new(firmware: Vec<u8>, version: impl Into<String>) -> Result<Self, PayloadError> {
        let version = version.into();
        if version.is_empty() {
            return Err(PayloadError::EmptyVersion);
        }
        let digest = sha256(&firmware);
        Ok(Self {
            firmware,
            version,
            digest,
        })
    }

    pub fn firmware(&self) -> &[u8] {
        &self.firmware
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn into_firmware(self) -> Vec<u8> {
        self.firmware
    }
}

/// Encodes the payload map. Written directly rather than through
/// [`CborValue`] so large firmware is copied once.
pub fn encode_payload(p: &FirmwarePackage) -> Vec<u8> {
    let mut out = Vec::with_capacity(p.firmware.len() + p.version.len() + 64);
    write_head(&mut out, 5, 3);
    // keys in deterministic order: "fw" < "digest" < "version" (length first)
    text(&mut out, KEY_FW);
    write_head(&mut out, 2, p.firmware.len() as u64);
    out.extend_from_slice(&p.firmware);
    text(&mut out, KEY_DIGEST);
    write_head(&mut out, 2, 32);
    out.extend_from_slice(&p.digest);
    text(&mut out, KEY_VERSION);
    text(&mut out, &p.version);
    out
}

fn text(out: &mut Vec<u8>, s: &str) {
    write_head(out, 3, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

/// Decodes a payload map and re-checks the embedded digest.
pub fn decode_payload(bytes: &[u8]) -> Result<FirmwarePackage, PayloadError> {
    let CborValue::Map(entries) = cbor::decode(bytes)? else {
        return Err(PayloadError::Malformed("payload is not a map"));
    };
    let (mut fw, mut digest, mut version) = (None, None, None);
    for (k, v) in entries {
        match (k.as_text(), v) {
            (Some(KEY_FW), CborValue::ByteString(b)) => fw = Some(b),
            (Some(KEY_DIGEST), CborValue::ByteString(b)) => {
                digest = Some(
                    <[u8; 32]>::try_from(b.as_slice())
                        .map_err(|_| PayloadError::Malformed("digest is not 32 bytes"))?,
                )
            }
            (Some(KEY_VERSION), CborValue::TextString(s)) => version = Some(s),
            (Some(KEY_FW | KEY_DIGEST | KEY_VERSION), _) => {
                return Err(PayloadError::Malformed("field has the wrong type"))
            }
            _ => return Err(PayloadError::Malformed("unknown field")),
        }
    }
    let firmware = fw.ok_or(PayloadError::Malformed("missing fw"))?;
    let digest = digest.ok_or(PayloadError::Malformed("missing digest"))?;
    let version = version.ok_or(PayloadError::Malformed("missing version"))?;
    let package = FirmwarePackage::new(firmware, version)?;
    if package.digest != digest {
        return Err(PayloadError::DigestMismatch);
    }
    Ok(package)
}

/// Signs `package` and returns the message without serializing it.
pub fn package_message(
    package: &FirmwarePackage,
    key: &KeyPair,
    chain: &CertificateChain,
    alg: SigningAlgorithm,
    now: u64,
) -> Result<CoseSign1Message, CoseError> {
    cose::sign_message(
        ProtectedHeader::new(alg),
        UnprotectedHeader::new(now, chain),
        encode_payload(package),
        key,
    )
}

/// Produces the `.cose` file contents for `package`.
pub fn package_firmware(
    package: &FirmwarePackage,
    key: &KeyPair,
    chain: &CertificateChain,
    alg: SigningAlgorithm,
    now: u64,
) -> Result<Vec<u8>, CoseError> {
    cose::encode_message(&package_message(package, key, chain, alg, now)?)
}
