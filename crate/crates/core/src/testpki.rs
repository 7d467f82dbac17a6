//! Deterministic test PKI.
//!
//! Keys are derived from a seed by hashing, and ECDSA signatures use RFC 6979
//! nonces, so the same seed always yields byte-identical certificates. This
//! is for tests, benchmarks and demos only; never use it for real keys.

use alloc::{format, string::String, vec::Vec};
use core::str::FromStr;

use der::asn1::{BitString, OctetString, UtcTime};
use der::oid::AssociatedOid;
use der::Encode;
use p256::ecdsa::SigningKey;
use p256::pkcs8::EncodePublicKey;
use x509_cert::ext::pkix::{
    AuthorityKeyIdentifier, BasicConstraints, KeyUsage, KeyUsages, SubjectKeyIdentifier,
};
use x509_cert::ext::Extension;
use x509_cert::name::Name;
use x509_cert::serial_number::SerialNumber;
use x509_cert::spki::{AlgorithmIdentifierOwned, SubjectPublicKeyInfoOwned};
use x509_cert::time::{Time, Validity};
use x509_cert::{Certificate as X509, TbsCertificate, Version};

use crate::cert::{parse_der, Certificate, CertificateChain, TrustStore};
use crate::crypto::{sha256, sign_der, KeyPair};

/// 2024-01-01T00:00:00Z
pub const DEFAULT_NOT_BEFORE: u64 = 1_704_067_200;
/// 2044-01-01T00:00:00Z
pub const DEFAULT_NOT_AFTER: u64 = 2_335_219_200;

const ECDSA_WITH_SHA256: der::oid::ObjectIdentifier =
    der::oid::ObjectIdentifier::new_unwrap("1.2.840.10045.4.3.2");

/// Derives a P-256 key from `(seed, label)`.
pub fn derive_key(seed: u64, label: &str) -> KeyPair {
    let mut counter = 0u32;
    loop {
        let mut input = Vec::with_capacity(64);
        input.extend_from_slice(b"gridsign test pki");
        input.extend_from_slice(&seed.to_be_bytes());
        input.extend_from_slice(label.as_bytes());
        input.extend_from_slice(&counter.to_be_bytes());
        if let Ok(sk) = SigningKey::from_slice(&sha256(&input)) {
            return KeyPair::from_p256(sk);
        }
        counter += 1;
    }
}

/// Fields of a certificate to issue.
#[derive(Debug, Clone)]
pub struct CertTemplate {
    /// RFC 4514 string, e.g. `CN=Leaf,O=Example,C=TW`.
    pub subject: String,
    pub serial: u64,
    pub not_before: u64,
    pub not_after: u64,
    pub ca: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("cannot build test certificate: {0}")]
pub struct IssueError(&'static str);

/// Issues a certificate for `subject_key`. With `issuer == None` the
/// certificate is self-signed by `subject_key`.
pub fn issue(
    template: &CertTemplate,
    subject_key: &KeyPair,
    issuer: Option<(&Certificate, &KeyPair)>,
) -> Result<Certificate, IssueError> {
    let subject = Name::from_str(&template.subject).map_err(|_| IssueError("subject name"))?;
    let spki_der = match subject_key.public_key() {
        crate::crypto::PublicKey::P256(vk) => vk
            .to_public_key_der()
            .map_err(|_| IssueError("public key"))?,
    };
    let spki = <SubjectPublicKeyInfoOwned as der::Decode>::from_der(spki_der.as_bytes())
        .map_err(|_| IssueError("public key"))?;
    let ski = key_id(&spki);

    let (issuer_name, issuer_key, aki) = match issuer {
        Some((cert, key)) => {
            let name = <Name as der::Decode>::from_der(cert.subject_der())
                .map_err(|_| IssueError("issuer name"))?;
            let issuer_spki_der = match key.public_key() {
                crate::crypto::PublicKey::P256(vk) => vk
                    .to_public_key_der()
                    .map_err(|_| IssueError("issuer key"))?,
            };
            let issuer_spki =
                <SubjectPublicKeyInfoOwned as der::Decode>::from_der(issuer_spki_der.as_bytes())
                    .map_err(|_| IssueError("issuer key"))?;
            (name, key, key_id(&issuer_spki))
        }
        None => (subject.clone(), subject_key, ski.clone()),
    };

    let usage = if template.ca {
        KeyUsage(KeyUsages::KeyCertSign | KeyUsages::CRLSign)
    } else {
        KeyUsage(KeyUsages::DigitalSignature.into())
    };
    let extensions = alloc::vec![
        extension(
            &BasicConstraints {
                ca: template.ca,
                path_len_constraint: None,
            },
            true,
        )?,
        extension(&usage, true)?,
        extension(
            &SubjectKeyIdentifier(OctetString::new(ski).map_err(|_| IssueError("ski"))?),
            false,
        )?,
        extension(
            &AuthorityKeyIdentifier {
                key_identifier: Some(OctetString::new(aki).map_err(|_| IssueError("aki"))?),
                authority_cert_issuer: None,
                authority_cert_serial_number: None,
            },
            false,
        )?,
    ];

    let algorithm = AlgorithmIdentifierOwned {
        oid: ECDSA_WITH_SHA256,
        parameters: None,
    };
    let tbs = TbsCertificate {
        version: Version::V3,
        serial_number: serial(template.serial)?,
        signature: algorithm.clone(),
        issuer: issuer_name,
        validity: Validity {
            not_before: utc(template.not_before)?,
            not_after: utc(template.not_after)?,
        },
        subject,
        subject_public_key_info: spki,
        issuer_unique_id: None,
        subject_unique_id: None,
        extensions: Some(extensions),
    };
    let tbs_der = tbs.to_der().map_err(|_| IssueError("tbs encoding"))?;
    let sig = sign_der(&tbs_der, issuer_key).map_err(|_| IssueError("signing"))?;
    let cert = X509 {
        tbs_certificate: tbs,
        signature_algorithm: algorithm,
        signature: BitString::from_bytes(&sig).map_err(|_| IssueError("signature"))?,
    };
    let der = cert.to_der().map_err(|_| IssueError("encoding"))?;
    parse_der(&der).map_err(|_| IssueError("reparse"))
}

fn serial(n: u64) -> Result<SerialNumber, IssueError> {
    let bytes = n.to_be_bytes();
    let skip = bytes.iter().take_while(|&&b| b == 0).count().min(7);
    SerialNumber::new(&bytes[skip..]).map_err(|_| IssueError("serial"))
}

fn key_id(spki: &SubjectPublicKeyInfoOwned) -> Vec<u8> {
    sha256(spki.subject_public_key.raw_bytes())[..20].to_vec()
}

fn extension<T: Encode + AssociatedOid>(ext: &T, critical: bool) -> Result<Extension, IssueError> {
    Ok(Extension {
        extn_id: T::OID,
        critical,
        extn_value: OctetString::new(ext.to_der().map_err(|_| IssueError("extension"))?)
            .map_err(|_| IssueError("extension"))?,
    })
}

fn utc(secs: u64) -> Result<Time, IssueError> {
    UtcTime::from_unix_duration(core::time::Duration::from_secs(secs))
        .map(Time::UtcTime)
        .map_err(|_| IssueError("validity time"))
}

/// A root, an optional run of intermediates and a signing leaf.
#[derive(Debug, Clone)]
pub struct TestPki {
    pub root_key: KeyPair,
    pub root: Certificate,
    /// Leaf first; the top certificate is issued by `root`.
    pub chain: CertificateChain,
    pub leaf_key: KeyPair,
}

impl TestPki {
    /// Builds a PKI whose signer chain has `chain_len` certificates
    /// (leaf plus `chain_len - 1` intermediates). `chain_len` of zero is
    /// treated as one.
    pub fn generate(seed: u64, chain_len: usize) -> Self {
        Self::generate_with_validity(seed, chain_len, DEFAULT_NOT_BEFORE, DEFAULT_NOT_AFTER)
    }

    /// Like [`TestPki::generate`], with the given window on the leaf.
    pub fn generate_with_validity(
        seed: u64,
        chain_len: usize,
        leaf_not_before: u64,
        leaf_not_after: u64,
    ) -> Self {
        let chain_len = chain_len.max(1);
        let template = |subject: String, serial: u64, ca: bool| CertTemplate {
            subject,
            serial,
            not_before: DEFAULT_NOT_BEFORE,
            not_after: DEFAULT_NOT_AFTER,
            ca,
        };
        let org = format!("O=Grid Utility {seed}");

        let root_key = derive_key(seed, "root");
        let root = issue(
            &template(format!("CN=Firmware Root CA,{org}"), 1, true),
            &root_key,
            None,
        )
        .expect("test root");

        let mut issuer_cert = root.clone();
        let mut issuer_key = root_key.clone();
        let mut upper = Vec::new();
        for i in 1..chain_len {
            let key = derive_key(seed, &format!("intermediate-{i}"));
            let cert = issue(
                &template(
                    format!("CN=Firmware Signing CA {i},{org}"),
                    1 + i as u64,
                    true,
                ),
                &key,
                Some((&issuer_cert, &issuer_key)),
            )
            .expect("test intermediate");
            upper.push(cert.clone());
            issuer_cert = cert;
            issuer_key = key;
        }

        let leaf_key = derive_key(seed, "leaf");
        let mut leaf_template = template(
            format!("CN=Firmware Signer,{org}"),
            100,
            false,
        );
        leaf_template.not_before = leaf_not_before;
        leaf_template.not_after = leaf_not_after;
        let leaf = issue(&leaf_template, &leaf_key, Some((&issuer_cert, &issuer_key)))
            .expect("test leaf");

        let mut certs = alloc::vec![leaf];
        certs.extend(upper.into_iter().rev());
        Self {
            root_key,
            root,
            chain: CertificateChain::new(certs).expect("non-empty"),
            leaf_key,
        }
    }

    pub fn trust_store(&self) -> TrustStore {
        TrustStore::new(self.root.clone())
    }
}
