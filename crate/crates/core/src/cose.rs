//! COSE_Sign1 envelope (RFC 8152 / RFC 9052).
//!
//! Wire form: `18([protected: bstr, unprotected: map, payload: bstr,
//! signature: bstr])`. The protected header carries the algorithm; the
//! unprotected header carries the signing timestamp and the `x5chain`.
//! Only the protected bytes and payload are covered by the signature.

use alloc::{string::String, vec::Vec};

use crate::cbor::{self, write_head, CborError, CborValue};
use crate::cert::{self, CertError, CertificateChain, X5CHAIN_LABEL};
use crate::crypto::{self, CryptoError, KeyPair, PublicKey, SigningAlgorithm};

/// CBOR tag for COSE_Sign1.
pub const COSE_SIGN1_TAG: u64 = 18;
/// Header label of the algorithm parameter.
pub const HEADER_ALG: i64 = 1;
/// Text key of the signing-time entry in the unprotected header.
pub const TIMESTAMP_KEY: &str = "timestamp";

const SIGNATURE1_CONTEXT: &str = "Signature1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoseError {
    #[error("malformed CBOR: {0}")]
    MalformedCbor(#[from] CborError),
    #[error("not a COSE_Sign1 message: {0}")]
    NotCoseSign1(&'static str),
    #[error("missing required header parameter {0}")]
    MissingRequiredHeader(&'static str),
    #[error("invalid header parameter {0}")]
    InvalidHeader(&'static str),
    #[error("unsupported algorithm {0}")]
    UnsupportedAlgorithm(i64),
    #[error("signing key does not match the protected algorithm")]
    AlgorithmMismatch,
    #[error("signing key does not match the leaf certificate")]
    KeyCertificateMismatch,
    #[error("message carries no x5chain")]
    MissingX5Chain,
    #[error(transparent)]
    Certificate(#[from] CertError),
    #[error(transparent)]
    Crypto(CryptoError),
}

impl From<CryptoError> for CoseError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::UnsupportedAlgorithm(label) => CoseError::UnsupportedAlgorithm(label),
            other => CoseError::Crypto(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedHeader {
    pub alg: SigningAlgorithm,
    /// Other protected parameters, kept as received.
    pub extra: Vec<(CborValue, CborValue)>,
}

impl ProtectedHeader {
    pub fn new(alg: SigningAlgorithm) -> Self {
        Self {
            alg,
            extra: Vec::new(),
        }
    }

    pub fn to_cbor(&self) -> CborValue {
        let mut entries = alloc::vec![(
            CborValue::from(HEADER_ALG),
            CborValue::from(self.alg.cose_label())
        )];
        entries.extend(self.extra.iter().cloned());
        CborValue::Map(entries)
    }

    /// Deterministic encoding, as carried inside the protected bstr.
    pub fn encode(&self) -> Result<Vec<u8>, CoseError> {
        Ok(cbor::encode(&self.to_cbor())?)
    }

    /// Parses serialized protected-header bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self, CoseError> {
        // a zero-length protected bstr stands for the empty map
        if bytes.is_empty() {
            return Err(CoseError::MissingRequiredHeader("alg"));
        }
        let CborValue::Map(entries) = cbor::decode(bytes)? else {
            return Err(CoseError::NotCoseSign1("protected header is not a map"));
        };
        let mut alg = None;
        let mut extra = Vec::new();
        for (k, v) in entries {
            if k.as_i64() == Some(HEADER_ALG) {
                let label = v.as_i64().ok_or(CoseError::InvalidHeader("alg"))?;
                alg = Some(SigningAlgorithm::from_cose_label(label)?);
            } else {
                extra.push((k, v));
            }
        }
        Ok(Self {
            alg: alg.ok_or(CoseError::MissingRequiredHeader("alg"))?,
            extra,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnprotectedHeader {
    /// Signing time, seconds since the Unix epoch.
    pub timestamp: Option<u64>,
    /// Raw `x5chain` value (label 33), parsed on demand.
    pub x5chain: Option<CborValue>,
    /// Any other parameters, preserved opaquely.
    pub extra: Vec<(CborValue, CborValue)>,
}

impl UnprotectedHeader {
    pub fn new(timestamp: u64, chain: &CertificateChain) -> Self {
        Self {
            timestamp: Some(timestamp),
            x5chain: Some(cert::chain_to_x5chain(chain)),
            extra: Vec::new(),
        }
    }

    /// Parses the embedded chain, if any.
    pub fn chain(&self) -> Option<Result<CertificateChain, CertError>> {
        self.x5chain.as_ref().map(cert::x5chain_to_chain)
    }

    pub fn to_cbor(&self) -> CborValue {
        let mut entries = Vec::with_capacity(self.extra.len() + 2);
        if let Some(chain) = &self.x5chain {
            entries.push((CborValue::from(X5CHAIN_LABEL), chain.clone()));
        }
        if let Some(ts) = self.timestamp {
            entries.push((CborValue::from(TIMESTAMP_KEY), CborValue::UnsignedInt(ts)));
        }
        entries.extend(self.extra.iter().cloned());
        CborValue::Map(entries)
    }

    fn from_cbor(value: CborValue) -> Result<Self, CoseError> {
        let CborValue::Map(entries) = value else {
            return Err(CoseError::NotCoseSign1("unprotected header is not a map"));
        };
        let mut header = Self::default();
        for (k, v) in entries {
            if k.as_i64() == Some(X5CHAIN_LABEL) {
                header.x5chain = Some(v);
            } else if k.as_text() == Some(TIMESTAMP_KEY) {
                header.timestamp = Some(v.as_u64().ok_or(CoseError::InvalidHeader("timestamp"))?);
            } else {
                header.extra.push((k, v));
            }
        }
        Ok(header)
    }
}

/// A decoded or freshly signed COSE_Sign1 message.
///
/// The serialized protected header is stored as received; signatures are
/// always checked against those bytes, never a re-encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoseSign1Message {
    protected: ProtectedHeader,
    protected_bytes: Vec<u8>,
    pub unprotected: UnprotectedHeader,
    pub payload: Vec<u8>,
    pub signature: Vec<u8>,
}

impl CoseSign1Message {
    /// Assembles a message from its wire parts, parsing `protected_bytes`.
    pub fn from_parts(
        protected_bytes: Vec<u8>,
        unprotected: UnprotectedHeader,
        payload: Vec<u8>,
        signature: Vec<u8>,
    ) -> Result<Self, CoseError> {
        Ok(Self {
            protected: ProtectedHeader::decode(&protected_bytes)?,
            protected_bytes,
            unprotected,
            payload,
            signature,
        })
    }

    pub fn protected(&self) -> &ProtectedHeader {
        &self.protected
    }

    pub fn protected_bytes(&self) -> &[u8] {
        &self.protected_bytes
    }

    pub fn alg(&self) -> SigningAlgorithm {
        self.protected.alg
    }

    /// The bytes the signature covers.
    pub fn to_be_signed(&self) -> Vec<u8> {
        build_sig_structure(&self.protected_bytes, &[], &self.payload)
    }

    /// Checks the signature under `key`.
    pub fn verify_signature(&self, key: &PublicKey) -> Result<bool, CoseError> {
        Ok(crypto::verify(
            &self.to_be_signed(),
            &self.signature,
            key,
            self.protected.alg,
        )?)
    }
}

/// Deterministic encoding of `["Signature1", protected, external_aad, payload]`.
pub fn build_sig_structure(protected_bytes: &[u8], external_aad: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        32 + protected_bytes.len() + external_aad.len() + payload.len(),
    );
    write_head(&mut out, 4, 4);
    write_head(&mut out, 3, SIGNATURE1_CONTEXT.len() as u64);
    out.extend_from_slice(SIGNATURE1_CONTEXT.as_bytes());
    for field in [protected_bytes, external_aad, payload] {
        write_head(&mut out, 2, field.len() as u64);
        out.extend_from_slice(field);
    }
    out
}

/// Signs `payload`. The leaf of the unprotected `x5chain` must certify
/// `key`'s public key.
pub fn sign_message(
    protected: ProtectedHeader,
    unprotected: UnprotectedHeader,
    payload: Vec<u8>,
    key: &KeyPair,
) -> Result<CoseSign1Message, CoseError> {
    if key.algorithm() != protected.alg {
        return Err(CoseError::AlgorithmMismatch);
    }
    let x5chain = unprotected
        .x5chain
        .as_ref()
        .ok_or(CoseError::MissingX5Chain)?;
    let leaf_der = cert::x5chain_ders(x5chain)
        .first()
        .copied()
        .ok_or(CoseError::MissingX5Chain)?;
    if cert::parse_der(leaf_der)?.public_key() != key.public_key() {
        return Err(CoseError::KeyCertificateMismatch);
    }

    let protected_bytes = protected.encode()?;
    let signature = crypto::sign(&build_sig_structure(&protected_bytes, &[], &payload), key)?;
    Ok(CoseSign1Message {
        protected,
        protected_bytes,
        unprotected,
        payload,
        signature,
    })
}

/// Tag-18 wrapped deterministic encoding.
pub fn encode_message(m: &CoseSign1Message) -> Result<Vec<u8>, CoseError> {
    let unprotected = cbor::encode(&m.unprotected.to_cbor())?;
    let mut out = Vec::with_capacity(
        32 + m.protected_bytes.len() + unprotected.len() + m.payload.len() + m.signature.len(),
    );
    write_head(&mut out, 6, COSE_SIGN1_TAG);
    write_head(&mut out, 4, 4);
    write_head(&mut out, 2, m.protected_bytes.len() as u64);
    out.extend_from_slice(&m.protected_bytes);
    out.extend_from_slice(&unprotected);
    write_head(&mut out, 2, m.payload.len() as u64);
    out.extend_from_slice(&m.payload);
    write_head(&mut out, 2, m.signature.len() as u64);
    out.extend_from_slice(&m.signature);
    Ok(out)
}

/// Decodes a tagged or untagged COSE_Sign1 message.
pub fn decode_message(bytes: &[u8]) -> Result<CoseSign1Message, CoseError> {
    let value = match cbor::decode(bytes)? {
        CborValue::Tag(COSE_SIGN1_TAG, inner) => *inner,
        CborValue::Tag(..) => return Err(CoseError::NotCoseSign1("unexpected tag")),
        v => v,
    };
    let CborValue::Array(items) = value else {
        return Err(CoseError::NotCoseSign1("not an array"));
    };
    let Ok::<[CborValue; 4], _>([protected, unprotected, payload, signature]) = items.try_into()
    else {
        return Err(CoseError::NotCoseSign1("array does not have four elements"));
    };
    let bstr = |v: CborValue, what: &'static str| match v {
        CborValue::ByteString(b) => Ok(b),
        _ => Err(CoseError::NotCoseSign1(what)),
    };
    CoseSign1Message::from_parts(
        bstr(protected, "protected header is not a byte string")?,
        UnprotectedHeader::from_cbor(unprotected)?,
        bstr(payload, "payload is not an attached byte string")?,
        bstr(signature, "signature is not a byte string")?,
    )
}

/// Human-oriented summary used by inspection tooling.
pub fn describe_headers(m: &CoseSign1Message) -> Vec<(String, String)> {
    use alloc::string::ToString;
    let mut out = alloc::vec![("alg".into(), m.alg().name().into())];
    if let Some(ts) = m.unprotected.timestamp {
        out.push(("timestamp".into(), ts.to_string()));
    }
    for (k, v) in &m.unprotected.extra {
        out.push((k.to_string(), v.to_string()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testpki::TestPki;
    use alloc::vec;

    fn message(chain_len: usize, payload: &[u8]) -> (TestPki, CoseSign1Message) {
        let pki = TestPki::generate(42, chain_len);
        let m = sign_message(
            ProtectedHeader::new(SigningAlgorithm::EcdsaP256Sha256),
            UnprotectedHeader::new(1_700_000_000, &pki.chain),
            payload.to_vec(),
            &pki.leaf_key,
        )
        .unwrap();
        (pki, m)
    }

    #[test]
    fn sig_structure_layout() {
        let s = build_sig_structure(&[], &[], &[]);
        assert_eq!(s[0], 0x84);
        assert_eq!(&s[1..12], b"\x6aSignature1");
        assert_eq!(&s[12..], &[0x40, 0x40, 0x40]);
        assert_eq!(s, build_sig_structure(&[], &[], &[]));
        let expected = cbor::encode(&CborValue::Array(vec![
            CborValue::from("Signature1"),
            CborValue::ByteString(vec![0xa1, 0x01, 0x26]),
            CborValue::ByteString(vec![]),
            CborValue::ByteString(vec![7; 300]),
        ]))
        .unwrap();
        assert_eq!(build_sig_structure(&[0xa1, 0x01, 0x26], &[], &[7; 300]), expected);
    }

    #[test]
    fn protected_header_bytes() {
        let p = ProtectedHeader::new(SigningAlgorithm::EcdsaP256Sha256);
        assert_eq!(p.encode().unwrap(), [0xa1, 0x01, 0x26]);
        assert_eq!(ProtectedHeader::decode(&[0xa1, 0x01, 0x26]).unwrap(), p);
        assert_eq!(
            ProtectedHeader::decode(&[0xa1, 0x01, 0x27]),
            Err(CoseError::UnsupportedAlgorithm(-8))
        );
        assert_eq!(
            ProtectedHeader::decode(&[]),
            Err(CoseError::MissingRequiredHeader("alg"))
        );
        assert_eq!(
            ProtectedHeader::decode(&[0xa0]),
            Err(CoseError::MissingRequiredHeader("alg"))
        );
    }

    #[test]
    fn roundtrip_preserves_everything() {
        for n in [1, 2] {
            let (pki, mut m) = message(n, b"hello");
            m.unprotected
                .extra
                .push((CborValue::from(-70000i64), CborValue::from("opaque")));
            let enc = encode_message(&m).unwrap();
            assert_eq!(enc[0], 0xd2);
            let back = decode_message(&enc).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.protected_bytes(), m.protected_bytes());
            assert!(back.verify_signature(pki.leaf_key.public_key()).unwrap());
            assert_eq!(back.unprotected.chain().unwrap().unwrap(), pki.chain);
        }
    }

    #[test]
    fn untagged_and_noncanonical_protected_accepted() {
        let (pki, m) = message(1, b"x");
        let enc = encode_message(&m).unwrap();
        assert_eq!(decode_message(&enc[1..]).unwrap(), m);

        // Foreign signer emitting a non-shortest alg label: verification must
        // use the received bytes.
        let protected = vec![0xa1, 0x18, 0x01, 0x26];
        let tbs = build_sig_structure(&protected, &[], b"x");
        let sig = crypto::sign(&tbs, &pki.leaf_key).unwrap();
        let foreign =
            CoseSign1Message::from_parts(protected, m.unprotected.clone(), b"x".to_vec(), sig)
                .unwrap();
        let back = decode_message(&encode_message(&foreign).unwrap()).unwrap();
        assert!(back.verify_signature(pki.leaf_key.public_key()).unwrap());
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            decode_message(&[0x83, 0x40, 0xa0, 0x40]),
            Err(CoseError::NotCoseSign1(_))
        ));
        assert!(matches!(
            decode_message(&[0xd1, 0x84, 0x43, 0xa1, 0x01, 0x26, 0xa0, 0x40, 0x40]),
            Err(CoseError::NotCoseSign1(_))
        ));
        // detached payload
        assert!(matches!(
            decode_message(&[0x84, 0x43, 0xa1, 0x01, 0x26, 0xa0, 0xf6, 0x40]),
            Err(CoseError::NotCoseSign1(_))
        ));
        assert!(matches!(
            decode_message(&[0x84, 0x40, 0xa0, 0x40, 0x40]),
            Err(CoseError::MissingRequiredHeader("alg"))
        ));
        assert!(matches!(decode_message(&[0x84]), Err(CoseError::MalformedCbor(_))));
        assert!(matches!(
            decode_message(&[0x84, 0x43, 0xa1, 0x01, 0x26, 0xa1, 0x69, b't', b'i', b'm', b'e', b's', b't', b'a', b'm', b'p', 0x20, 0x40, 0x40]),
            Err(CoseError::InvalidHeader("timestamp"))
        ));
    }

    #[test]
    fn sign_message_binding_checks() {
        let pki = TestPki::generate(1, 1);
        let other = TestPki::generate(2, 1);
        let err = sign_message(
            ProtectedHeader::new(SigningAlgorithm::EcdsaP256Sha256),
            UnprotectedHeader::new(0, &pki.chain),
            vec![],
            &other.leaf_key,
        );
        assert_eq!(err, Err(CoseError::KeyCertificateMismatch));
        let err = sign_message(
            ProtectedHeader::new(SigningAlgorithm::EcdsaP256Sha256),
            UnprotectedHeader::default(),
            vec![],
            &pki.leaf_key,
        );
        assert_eq!(err, Err(CoseError::MissingX5Chain));
    }

    #[test]
    fn unprotected_timestamp_is_not_covered() {
        let (pki, mut m) = message(1, b"fw");
        m.unprotected.timestamp = Some(12345);
        let back = decode_message(&encode_message(&m).unwrap()).unwrap();
        assert!(back.verify_signature(pki.leaf_key.public_key()).unwrap());
    }

    #[test]
    fn single_cert_x5chain_is_a_bare_bstr() {
        let (pki, m) = message(1, b"");
        assert_eq!(
            m.unprotected.x5chain,
            Some(CborValue::ByteString(pki.chain.leaf().der().to_vec()))
        );
        let (pki, m) = message(2, b"");
        assert_eq!(
            m.unprotected.x5chain,
            Some(CborValue::Array(
                pki.chain
                    .certs()
                    .iter()
                    .map(|c| CborValue::ByteString(c.der().to_vec()))
                    .collect()
            ))
        );
    }
}
