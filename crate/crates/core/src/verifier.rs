//! Device-side update verification.
//!
//! [`verify_update`] is a pure function of the packet, the trust store and
//! the caller-supplied time. Steps run strictly in order and stop at the first
//! failure:
//!
//! 1. `decode`: parse the COSE_Sign1 structure
//! 2. `x5chain-extract`: parse the embedded certificate chain
//! 3. `chain-validate`: linkage, cert signatures, validity windows
//! 4. `anchor-primary`: is the chain top anchored by the pre-stored issuer?
//! 5. `anchor-default`: only if 4 missed, try the default certificate set
//! 6. `signature-verify`: COSE signature under the leaf key
//! 7. `payload-digest`: decode the payload and check its embedded digest

use alloc::{string::String, vec::Vec};
use core::fmt;

use crate::cert::{anchor_check, validate_chain, AnchoredBy, ChainError, TrustStore};
use crate::cose::{self, CoseError};
use crate::firmware::{decode_payload, FirmwarePackage, PayloadError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Decode,
    X5chainExtract,
    ChainValidate,
    AnchorPrimary,
    AnchorDefault,
    SignatureVerify,
    PayloadDigest,
}

impl Step {
    pub const ORDER: [Step; 7] = [
        Step::Decode,
        Step::X5chainExtract,
        Step::ChainValidate,
        Step::AnchorPrimary,
        Step::AnchorDefault,
        Step::SignatureVerify,
        Step::PayloadDigest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::Decode => "decode",
            Step::X5chainExtract => "x5chain-extract",
            Step::ChainValidate => "chain-validate",
            Step::AnchorPrimary => "anchor-primary",
            Step::AnchorDefault => "anchor-default",
            Step::SignatureVerify => "signature-verify",
            Step::PayloadDigest => "payload-digest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    Pass,
    Fail,
    /// The primary issuer did not anchor the chain; the default set is tried
    /// next. Not a failure by itself.
    Fallback,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Pass => "pass",
            StepStatus::Fail => "fail",
            StepStatus::Fallback => "fallback",
        }
    }
}

/// Generic rejection codes. They carry no key- or signature-dependent detail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum RejectReason {
    MalformedCbor,
    NotCoseSign1,
    MalformedHeader,
    UnsupportedAlgorithm,
    MissingX5Chain,
    MalformedCertificate,
    ChainLinkageError,
    ChainSignatureError,
    IssuerNotCa,
    CertificateExpired,
    CertificateNotYetValid,
    UntrustedIssuer,
    SignatureInvalid,
    MalformedPayload,
    DigestMismatch,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::MalformedCbor => "MalformedCbor",
            RejectReason::NotCoseSign1 => "NotCoseSign1",
            RejectReason::MalformedHeader => "MalformedHeader",
            RejectReason::UnsupportedAlgorithm => "UnsupportedAlgorithm",
            RejectReason::MissingX5Chain => "MissingX5Chain",
            RejectReason::MalformedCertificate => "MalformedCertificate",
            RejectReason::ChainLinkageError => "ChainLinkageError",
            RejectReason::ChainSignatureError => "ChainSignatureError",
            RejectReason::IssuerNotCa => "IssuerNotCa",
            RejectReason::CertificateExpired => "CertificateExpired",
            RejectReason::CertificateNotYetValid => "CertificateNotYetValid",
            RejectReason::UntrustedIssuer => "UntrustedIssuer",
            RejectReason::SignatureInvalid => "SignatureInvalid",
            RejectReason::MalformedPayload => "MalformedPayload",
            RejectReason::DigestMismatch => "DigestMismatch",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl From<&CoseError> for RejectReason {
    fn from(e: &CoseError) -> Self {
        match e {
            CoseError::MalformedCbor(_) => RejectReason::MalformedCbor,
            CoseError::NotCoseSign1(_) => RejectReason::NotCoseSign1,
            CoseError::UnsupportedAlgorithm(_) => RejectReason::UnsupportedAlgorithm,
            CoseError::MissingX5Chain => RejectReason::MissingX5Chain,
            CoseError::Certificate(_) => RejectReason::MalformedCertificate,
            _ => RejectReason::MalformedHeader,
        }
    }
}

impl From<ChainError> for RejectReason {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::Linkage { .. } => RejectReason::ChainLinkageError,
            ChainError::Signature { .. } => RejectReason::ChainSignatureError,
            ChainError::IssuerNotCa { .. } => RejectReason::IssuerNotCa,
            ChainError::Expired { .. } => RejectReason::CertificateExpired,
            ChainError::NotYetValid { .. } => RejectReason::CertificateNotYetValid,
        }
    }
}

/// An update that passed every step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptedUpdate {
    pub package: FirmwarePackage,
    /// Unprotected (unsigned) signing time, informational only.
    pub timestamp: Option<u64>,
    pub signer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Accepted(AcceptedUpdate),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub steps: Vec<(Step, StepStatus)>,
    pub outcome: Outcome,
    pub anchored_by: AnchoredBy,
}

impl VerificationReport {
    pub fn is_accepted(&self) -> bool {
        matches!(self.outcome, Outcome::Accepted(_))
    }

    pub fn accepted(&self) -> Option<&AcceptedUpdate> {
        match &self.outcome {
            Outcome::Accepted(a) => Some(a),
            Outcome::Rejected(_) => None,
        }
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self.outcome {
            Outcome::Rejected(r) => Some(r),
            Outcome::Accepted(_) => None,
        }
    }

    pub fn status_of(&self, step: Step) -> Option<StepStatus> {
        self.steps
            .iter()
            .find_map(|&(s, status)| (s == step).then_some(status))
    }
}

struct Run {
    steps: Vec<(Step, StepStatus)>,
    anchored_by: AnchoredBy,
}

impl Run {
    fn pass(&mut self, step: Step) {
        self.steps.push((step, StepStatus::Pass));
    }

    fn reject(mut self, step: Step, reason: RejectReason) -> VerificationReport {
        self.steps.push((step, StepStatus::Fail));
        VerificationReport {
            steps: self.steps,
            outcome: Outcome::Rejected(reason),
            anchored_by: self.anchored_by,
        }
    }
}

/// Verifies a `.cose` update packet against the device trust store.
pub fn verify_update(packet: &[u8], trust: &TrustStore, now: u64) -> VerificationReport {
    let mut run = Run {
        steps: Vec::with_capacity(7),
        anchored_by: AnchoredBy::None,
    };

    let message = match cose::decode_message(packet) {
        Ok(m) => m,
        Err(e) => return run.reject(Step::Decode, (&e).into()),
    };
    run.pass(Step::Decode);

    let chain = match message.unprotected.chain() {
        Some(Ok(chain)) => chain,
        Some(Err(_)) => return run.reject(Step::X5chainExtract, RejectReason::MalformedCertificate),
        None => return run.reject(Step::X5chainExtract, RejectReason::MissingX5Chain),
    };
    run.pass(Step::X5chainExtract);

    if let Err(e) = validate_chain(&chain, now) {
        return run.reject(Step::ChainValidate, e.into());
    }
    run.pass(Step::ChainValidate);

    match anchor_check(chain.top(), trust) {
        AnchoredBy::Primary => {
            run.anchored_by = AnchoredBy::Primary;
            run.pass(Step::AnchorPrimary);
        }
        AnchoredBy::DefaultSet => {
            run.steps.push((Step::AnchorPrimary, StepStatus::Fallback));
            run.anchored_by = AnchoredBy::DefaultSet;
            run.pass(Step::AnchorDefault);
        }
        AnchoredBy::None => {
            run.steps.push((Step::AnchorPrimary, StepStatus::Fallback));
            return run.reject(Step::AnchorDefault, RejectReason::UntrustedIssuer);
        }
    }

    let leaf_key = chain.leaf().public_key();
    let signature_ok = leaf_key.algorithm() == message.alg()
        && matches!(message.verify_signature(leaf_key), Ok(true));
    if !signature_ok {
        return run.reject(Step::SignatureVerify, RejectReason::SignatureInvalid);
    }
    run.pass(Step::SignatureVerify);

    let package = match decode_payload(&message.payload) {
        Ok(p) => p,
        Err(PayloadError::DigestMismatch) => {
            return run.reject(Step::PayloadDigest, RejectReason::DigestMismatch)
        }
        Err(_) => return run.reject(Step::PayloadDigest, RejectReason::MalformedPayload),
    };
    run.pass(Step::PayloadDigest);

    VerificationReport {
        steps: run.steps,
        outcome: Outcome::Accepted(AcceptedUpdate {
            package,
            timestamp: message.unprotected.timestamp,
            signer: String::from(chain.leaf().subject()),
        }),
        anchored_by: run.anchored_by,
    }
}

/// Checks that `report` respects the step ordering and outcome rules.
pub fn report_is_well_formed(report: &VerificationReport) -> bool {
    let mut last = None;
    for (step, _) in &report.steps {
        let idx = Step::ORDER.iter().position(|s| s == step);
        if idx <= last {
            return false;
        }
        last = idx;
    }
    let fails = report
        .steps
        .iter()
        .filter(|(_, s)| *s == StepStatus::Fail)
        .count();
    let default_ran = report.status_of(Step::AnchorDefault).is_some();
    let primary_fell_back = report.status_of(Step::AnchorPrimary) == Some(StepStatus::Fallback);
    if default_ran != primary_fell_back {
        return false;
    }
    match report.outcome {
        Outcome::Accepted(_) => fails == 0 && report.steps.len() >= 6,
        Outcome::Rejected(_) => {
            fails == 1 && report.steps.last().map(|(_, s)| *s) == Some(StepStatus::Fail)
        }
    }
}
