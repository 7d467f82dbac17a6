//! COSE_Sign1 through `coset`, signatures and digests through `ring`.

use ciborium::value::Value;
use coset::{iana, CborSerializable, CoseSign1, CoseSign1Builder, HeaderBuilder, Label, TaggedCborSerializable};
use ring::rand::SystemRandom;
use ring::signature::{self, EcdsaKeyPair, KeyPair as _, UnparsedPublicKey};

const X5CHAIN: i64 = 33;
const TIMESTAMP: &str = "timestamp";

/// DER prefix of a P-256 `SubjectPublicKeyInfo` up to the point bytes.
const P256_SPKI_PREFIX: [u8; 26] = [
    0x30, 0x59, 0x30, 0x13, 0x06, 0x07, 0x2a, 0x86, 0x48, 0xce, 0x3d, 0x02, 0x01, 0x06, 0x08,
    0x2a, 0x86, 0x48, 0xce, 0x3d, 0x03, 0x01, 0x07, 0x03, 0x42, 0x00,
];

/// An ECDSA P-256 key held by `ring`.
pub struct RingSigner {
    key: EcdsaKeyPair,
    pkcs8: Vec<u8>,
    rng: SystemRandom,
}

impl RingSigner {
    pub fn generate() -> Self {
        let rng = SystemRandom::new();
        let alg = &signature::ECDSA_P256_SHA256_FIXED_SIGNING;
        let pkcs8 = EcdsaKeyPair::generate_pkcs8(alg, &rng).expect("keygen").as_ref().to_vec();
        let key = EcdsaKeyPair::from_pkcs8(alg, &pkcs8, &rng).expect("own pkcs8");
        Self { key, pkcs8, rng }
    }

    pub fn pkcs8_der(&self) -> &[u8] {
        &self.pkcs8
    }

    /// Uncompressed SEC1 point.
    pub fn public_point(&self) -> &[u8] {
        self.key.public_key().as_ref()
    }

    /// Raw `r || s` signature.
    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.key.sign(&self.rng, msg).expect("signing").as_ref().to_vec()
    }
}

pub fn verify_raw(point: &[u8], msg: &[u8], sig: &[u8]) -> bool {
    UnparsedPublicKey::new(&signature::ECDSA_P256_SHA256_FIXED, point)
        .verify(msg, sig)
        .is_ok()
}

pub fn verify_der(point: &[u8], msg: &[u8], sig: &[u8]) -> bool {
    UnparsedPublicKey::new(&signature::ECDSA_P256_SHA256_ASN1, point)
        .verify(msg, sig)
        .is_ok()
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    ring::digest::digest(&ring::digest::SHA256, data)
        .as_ref()
        .try_into()
        .expect("32 bytes")
}

/// Finds the P-256 public point inside a certificate by its fixed SPKI
/// prefix.
pub fn cert_public_point(cert_der: &[u8]) -> Option<&[u8]> {
    let at = cert_der
        .windows(P256_SPKI_PREFIX.len())
        .position(|w| w == P256_SPKI_PREFIX)?;
    let start = at + P256_SPKI_PREFIX.len();
    cert_der.get(start..start + 65)
}

/// The firmware payload map, built and encoded by the reference CBOR library.
pub fn payload(firmware: &[u8], version: &str) -> Vec<u8> {
    payload_with_digest(firmware, &sha256(firmware), version)
}

pub fn payload_with_digest(firmware: &[u8], digest: &[u8], version: &str) -> Vec<u8> {
    // "fw" < "digest" < "version" in deterministic key order
    let map = Value::Map(vec![
        (Value::Text("fw".into()), Value::Bytes(firmware.to_vec())),
        (Value::Text("digest".into()), Value::Bytes(digest.to_vec())),
        (Value::Text("version".into()), Value::Text(version.into())),
    ]);
    crate::cbor::encode_value(&map)
}

pub struct DecodedPayload {
    pub firmware: Vec<u8>,
    pub digest: Vec<u8>,
    pub version: String,
}

pub fn decode_payload(bytes: &[u8]) -> Option<DecodedPayload> {
    let Value::Map(entries) = ciborium::de::from_reader::<Value, _>(bytes).ok()? else {
        return None;
    };
    let get = |name: &str| {
        entries
            .iter()
            .find(|(k, _)| k.as_text() == Some(name))
            .map(|(_, v)| v.clone())
    };
    Some(DecodedPayload {
        firmware: get("fw")?.into_bytes().ok()?,
        digest: get("digest")?.into_bytes().ok()?,
        version: get("version")?.into_text().ok()?,
    })
}

/// Builds a tagged COSE_Sign1 with `coset` and signs it with `signer`.
pub fn sign1(payload: Vec<u8>, chain: &[Vec<u8>], timestamp: u64, signer: &RingSigner) -> Vec<u8> {
    let x5chain = match chain {
        [one] => Value::Bytes(one.clone()),
        many => Value::Array(many.iter().cloned().map(Value::Bytes).collect()),
    };
    let mut unprotected = HeaderBuilder::new().value(X5CHAIN, x5chain).build();
    unprotected
        .rest
        .push((Label::Text(TIMESTAMP.into()), Value::Integer(timestamp.into())));
    CoseSign1Builder::new()
        .protected(HeaderBuilder::new().algorithm(iana::Algorithm::ES256).build())
        .unprotected(unprotected)
        .payload(payload)
        .create_signature(b"", |tbs| signer.sign(tbs))
        .build()
        .to_tagged_vec()
        .expect("coset serialization")
}

pub struct Verified {
    pub payload: Vec<u8>,
    pub chain: Vec<Vec<u8>>,
    pub timestamp: Option<u64>,
}

/// Parses with `coset` and checks the signature with `ring` under the leaf
/// certificate's key.
pub fn verify_sign1(bytes: &[u8]) -> Result<Verified, String> {
    let msg = CoseSign1::from_tagged_slice(bytes)
        .or_else(|_| CoseSign1::from_slice(bytes))
        .map_err(|e| format!("coset parse: {e:?}"))?;
    if msg.protected.header.alg != Some(coset::RegisteredLabelWithPrivate::Assigned(iana::Algorithm::ES256)) {
        return Err("alg is not ES256".into());
    }
    let chain: Vec<Vec<u8>> = match msg
        .unprotected
        .rest
        .iter()
        .find(|(l, _)| *l == Label::Int(X5CHAIN))
        .map(|(_, v)| v)
    {
        Some(Value::Bytes(b)) => vec![b.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_bytes().cloned().ok_or("x5chain entry"))
            .collect::<Result<_, _>>()?,
        _ => return Err("no x5chain".into()),
    };
    let timestamp = msg
        .unprotected
        .rest
        .iter()
        .find(|(l, _)| *l == Label::Text(TIMESTAMP.into()))
        .and_then(|(_, v)| v.as_integer())
        .and_then(|i| u64::try_from(i).ok());
    let point = cert_public_point(&chain[0]).ok_or("leaf key")?.to_vec();
    msg.verify_signature(b"", |sig, data| {
        if verify_raw(&point, data, sig) {
            Ok(())
        } else {
            Err("signature does not verify".to_string())
        }
    })?;
    Ok(Verified {
        payload: msg.payload.ok_or("detached payload")?,
        chain,
        timestamp,
    })
}
