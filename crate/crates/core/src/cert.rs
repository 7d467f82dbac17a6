//! X.509 handling: parsing, chain validation, trust anchoring and the COSE
//! `x5chain` representation.
//!
//! Names are compared as DER bytes. Only `ecdsa-with-SHA256` certificate
//! signatures over P-256 keys are supported; anything else fails
//! verification.

use alloc::{string::String, string::ToString, vec::Vec};
use core::ops::Range;

use der::asn1::AnyRef;
use der::oid::{AssociatedOid, ObjectIdentifier};
use der::{Decode, Encode, Header, Reader, SliceReader};
use x509_cert::ext::pkix::BasicConstraints;

use crate::cbor::CborValue;
use crate::crypto::{self, PublicKey};

/// COSE header label of `x5chain`.
pub const X5CHAIN_LABEL: i64 = 33;

const ECDSA_WITH_SHA256: ObjectIdentifier = ObjectIdentifier::new_unwrap("1.2.840.10045.4.3.2");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CertError {
    #[error("malformed certificate: {0}")]
    Malformed(&'static str),
    #[error("certificate key is not a supported P-256 key")]
    UnsupportedKey,
    #[error("certificate chain is empty")]
    EmptyChain,
}

/// Why a chain failed validation. `index` is the position in the chain,
/// leaf first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("certificate {index} is not issued by the next certificate's subject")]
    Linkage { index: usize },
    #[error("signature on certificate {index} does not verify")]
    Signature { index: usize },
    #[error("certificate {index} is used as an issuer but is not a CA")]
    IssuerNotCa { index: usize },
    #[error("certificate {index} has expired")]
    Expired { index: usize },
    #[error("certificate {index} is not yet valid")]
    NotYetValid { index: usize },
}

/// A parsed certificate that keeps its original DER bytes.
#[derive(Debug, Clone)]
pub struct Certificate {
    der: Vec<u8>,
    tbs: Range<usize>,
    subject: String,
    issuer: String,
    subject_der: Vec<u8>,
    issuer_der: Vec<u8>,
    public_key: PublicKey,
    not_before: u64,
    not_after: u64,
    signature_alg: ObjectIdentifier,
    signature: Vec<u8>,
    ca: Option<bool>,
}

impl PartialEq for Certificate {
    fn eq(&self, other: &Self) -> bool {
        self.der == other.der
    }
}

impl Eq for Certificate {}

impl Certificate {
    pub fn from_der(der: &[u8]) -> Result<Self, CertError> {
        parse_der(der)
    }

    pub fn der(&self) -> &[u8] {
        &self.der
    }

    /// The signed `TBSCertificate` bytes, exactly as received.
    pub fn tbs_der(&self) -> &[u8] {
        &self.der[self.tbs.clone()]
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    pub fn subject_der(&self) -> &[u8] {
        &self.subject_der
    }

    pub fn issuer_der(&self) -> &[u8] {
        &self.issuer_der
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public_key
    }

    /// Start of the validity window, seconds since the Unix epoch.
    pub fn not_before(&self) -> u64 {
        self.not_before
    }

    pub fn not_after(&self) -> u64 {
        self.not_after
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject_der == self.issuer_der
    }

    /// `cA` flag of the basic constraints extension, if present.
    pub fn is_ca(&self) -> Option<bool> {
        self.ca
    }

    pub fn is_valid_at(&self, now: u64) -> bool {
        self.not_before <= now && now <= self.not_after
    }

    /// Checks that `issuer` could have issued this certificate: names link,
    /// `issuer` is not marked as a non-CA, and the signature verifies under
    /// its key.
    pub fn verify_issued_by(&self, issuer: &Certificate) -> Result<(), IssuedByError> {
        if self.issuer_der != issuer.subject_der {
            return Err(IssuedByError::NameMismatch);
        }
        if issuer.ca == Some(false) {
            return Err(IssuedByError::NotCa);
        }
        if self.signature_alg != ECDSA_WITH_SHA256
            || !crypto::verify_der(self.tbs_der(), &self.signature, &issuer.public_key)
        {
            return Err(IssuedByError::BadSignature);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssuedByError {
    NameMismatch,
    NotCa,
    BadSignature,
}

/// Parses a DER certificate, keeping `der` verbatim.
pub fn parse_der(der: &[u8]) -> Result<Certificate, CertError> {
    let cert = x509_cert::Certificate::from_der(der)
        .map_err(|_| CertError::Malformed("not a DER X.509 certificate"))?;
    let tbs = tbs_span(der).ok_or(CertError::Malformed("cannot locate TBSCertificate"))?;
    let tbs_cert = &cert.tbs_certificate;

    if cert.signature_algorithm != tbs_cert.signature {
        return Err(CertError::Malformed("signature algorithm fields disagree"));
    }
    let signature = cert
        .signature
        .as_bytes()
        .ok_or(CertError::Malformed("signature has unused bits"))?
        .to_vec();

    let spki = tbs_cert
        .subject_public_key_info
        .to_der()
        .map_err(|_| CertError::Malformed("subject public key info"))?;
    let public_key = PublicKey::from_spki_der(&spki).map_err(|_| CertError::UnsupportedKey)?;

    let not_before = tbs_cert.validity.not_before.to_unix_duration().as_secs();
    let not_after = tbs_cert.validity.not_after.to_unix_duration().as_secs();
    if not_before > not_after {
        return Err(CertError::Malformed("validity window is inverted"));
    }

    let mut ca = None;
    for ext in tbs_cert.extensions.iter().flatten() {
        if ext.extn_id == BasicConstraints::OID {
            let bc = BasicConstraints::from_der(ext.extn_value.as_bytes())
                .map_err(|_| CertError::Malformed("basic constraints"))?;
            ca = Some(bc.ca);
        }
    }

    let name_der = |n: &x509_cert::name::Name| {
        n.to_der()
            .map_err(|_| CertError::Malformed("distinguished name"))
    };

    Ok(Certificate {
        der: der.to_vec(),
        tbs,
        subject: tbs_cert.subject.to_string(),
        issuer: tbs_cert.issuer.to_string(),
        subject_der: name_der(&tbs_cert.subject)?,
        issuer_der: name_der(&tbs_cert.issuer)?,
        public_key,
        not_before,
        not_after,
        signature_alg: cert.signature_algorithm.oid,
        signature,
        ca,
    })
}

fn tbs_span(der: &[u8]) -> Option<Range<usize>> {
    let mut reader = SliceReader::new(der).ok()?;
    Header::decode(&mut reader).ok()?;
    let start = usize::try_from(reader.position()).ok()?;
    let tbs = AnyRef::decode(&mut reader).ok()?;
    let len = usize::try_from(tbs.encoded_len().ok()?).ok()?;
    Some(start..start + len)
}

/// Certificates ordered leaf (signer) first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateChain {
    certs: Vec<Certificate>,
}

impl CertificateChain {
    pub fn new(certs: Vec<Certificate>) -> Result<Self, CertError> {
        if certs.is_empty() {
            return Err(CertError::EmptyChain);
        }
        Ok(Self { certs })
    }

    pub fn leaf(&self) -> &Certificate {
        &self.certs[0]
    }

    /// The certificate furthest from the leaf, which must be anchored.
    pub fn top(&self) -> &Certificate {
        &self.certs[self.certs.len() - 1]
    }

    pub fn certs(&self) -> &[Certificate] {
        &self.certs
    }

    pub fn len(&self) -> usize {
        self.certs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The device's pre-provisioned trust material.
#[derive(Debug, Clone)]
pub struct TrustStore {
    pub issuer: Certificate,
    pub default_set: Vec<Certificate>,
}

impl TrustStore {
    pub fn new(issuer: Certificate) -> Self {
        Self {
            issuer,
            default_set: Vec::new(),
        }
    }

    pub fn with_default_set(mut self, certs: Vec<Certificate>) -> Self {
        self.default_set = certs;
        self
    }
}

/// Which part of the trust store anchored a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchoredBy {
    Primary,
    DefaultSet,
    None,
}

impl AnchoredBy {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchoredBy::Primary => "primary",
            AnchoredBy::DefaultSet => "default_set",
            AnchoredBy::None => "none",
        }
    }
}

/// Validates linkage, cert-on-cert signatures and validity windows.
///
/// A single-certificate chain has no links to check; its validity window is
/// still checked.
pub fn validate_chain(chain: &CertificateChain, now: u64) -> Result<(), ChainError> {
    for (index, pair) in chain.certs.windows(2).enumerate() {
        match pair[0].verify_issued_by(&pair[1]) {
            Ok(()) => {}
            Err(IssuedByError::NameMismatch) => return Err(ChainError::Linkage { index }),
            Err(IssuedByError::NotCa) => return Err(ChainError::IssuerNotCa { index: index + 1 }),
            Err(IssuedByError::BadSignature) => return Err(ChainError::Signature { index }),
        }
    }
    for (index, cert) in chain.certs.iter().enumerate() {
        if now > cert.not_after {
            return Err(ChainError::Expired { index });
        }
        if now < cert.not_before {
            return Err(ChainError::NotYetValid { index });
        }
    }
    Ok(())
}

fn anchored_by(top: &Certificate, anchor: &Certificate) -> bool {
    top == anchor || top.verify_issued_by(anchor).is_ok()
}

/// Decides whether `top` is anchored, trying the pre-stored issuer first and
/// the default set only if that fails.
pub fn anchor_check(top: &Certificate, trust: &TrustStore) -> AnchoredBy {
    if anchored_by(top, &trust.issuer) {
        AnchoredBy::Primary
    } else if trust.default_set.iter().any(|a| anchored_by(top, a)) {
        AnchoredBy::DefaultSet
    } else {
        AnchoredBy::None
    }
}

/// One certificate becomes a bare byte string; longer chains an array.
pub fn chain_to_x5chain(chain: &CertificateChain) -> CborValue {
    match chain.certs.as_slice() {
        [one] => CborValue::ByteString(one.der.clone()),
        many => CborValue::Array(
            many.iter()
                .map(|c| CborValue::ByteString(c.der.clone()))
                .collect(),
        ),
    }
}

pub fn x5chain_to_chain(value: &CborValue) -> Result<CertificateChain, CertError> {
    match value {
        CborValue::ByteString(der) => CertificateChain::new(alloc::vec![parse_der(der)?]),
        CborValue::Array(items) => {
            let certs = items
                .iter()
                .map(|item| {
                    item.as_bytes()
                        .ok_or(CertError::Malformed("x5chain entry is not a byte string"))
                        .and_then(parse_der)
                })
                .collect::<Result<Vec<_>, _>>()?;
            CertificateChain::new(certs)
        }
        _ => Err(CertError::Malformed("x5chain is neither bytes nor array")),
    }
}

/// DER blobs of an `x5chain` value without parsing them.
pub fn x5chain_ders(value: &CborValue) -> Vec<&[u8]> {
    match value {
        CborValue::ByteString(der) => alloc::vec![der.as_slice()],
        CborValue::Array(items) => items.iter().filter_map(CborValue::as_bytes).collect(),
        _ => Vec::new(),
    }
}
