//! Firmware signing and offline verification for constrained devices.
//!
//! Firmware is wrapped in a COSE_Sign1 envelope whose unprotected header
//! carries the signer's X.509 chain (`x5chain`), so a device can verify an
//! update from the packet alone plus its pre-stored issuer certificate.
//!
//! The crate is `no_std` and only needs `alloc`. It performs no I/O.

#![no_std]

extern crate alloc;

pub mod cbor;
pub mod cert;
pub mod cose;
pub mod crypto;
pub mod firmware;
pub mod json;
pub mod review;
pub mod testpki;
pub mod verifier;

pub use cbor::{CborError, CborValue};
pub use cert::{AnchoredBy, Certificate, CertificateChain, TrustStore};
pub use cose::CoseSign1Message;
pub use crypto::{KeyPair, PublicKey, SigningAlgorithm};
pub use firmware::{package_firmware, FirmwarePackage};
pub use review::{run_review, ReviewPolicy, ReviewReport};
pub use verifier::{verify_update, RejectReason, VerificationReport};
