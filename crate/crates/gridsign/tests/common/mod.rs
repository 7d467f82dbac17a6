#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use gridsign::service::{ServiceError, Signer, SigningService, State};
use gridsign_core::crypto::{sha256, SigningAlgorithm};
use gridsign_core::review::ReviewPolicy;
use gridsign_core::testpki::{TestPki, DEFAULT_NOT_BEFORE};
use gridsign_core::verify_update;

pub const NOW: u64 = DEFAULT_NOT_BEFORE + 86_400;
pub const ES256: SigningAlgorithm = SigningAlgorithm::EcdsaP256Sha256;
pub const FIRMWARE: &[u8] = b"\x7fELF benign firmware image";

pub fn pki() -> TestPki {
    TestPki::generate(2024, 2)
}

pub fn open_service(root: &Path, pki: &TestPki) -> SigningService {
    let mut signers = BTreeMap::new();
    signers.insert(
        "release".to_string(),
        Signer {
            key: pki.leaf_key.clone(),
            chain: pki.chain.clone(),
        },
    );
    SigningService::open(root, pki.root.clone(), signers, 1 << 20)
        .unwrap()
        .with_clock(|| NOW)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    ReviewBenign,
    ReviewDenylisted,
    Sign,
    SignUnknownKey,
    Download,
    Restart,
}

pub const ACTIONS: [Action; 6] = [
    Action::ReviewBenign,
    Action::ReviewDenylisted,
    Action::Sign,
    Action::SignUnknownKey,
    Action::Download,
    Action::Restart,
];

/// What the workflow allows: the next state, or the error code.
fn model(state: State, action: Action) -> Result<State, &'static str> {
    use Action::*;
    use State::*;
    match (state, action) {
        (_, Restart) => Ok(state),
        (Pending, ReviewBenign) => Ok(ReviewedApproved),
        (Pending, ReviewDenylisted) => Ok(ReviewedRejected),
        (ReviewedApproved, Sign) => Ok(Signed),
        (ReviewedApproved, SignUnknownKey) => Err("UnknownKeyRef"),
        (Signed, Download) => Ok(Signed),
        _ => Err("InvalidState"),
    }
}

#[derive(Debug, Default)]
pub struct Exploration {
    /// Distinct action sequences covered, all lengths up to the maximum.
    pub sequences: u64,
    pub steps: u64,
    /// Full-length sequences that end in `signed`.
    pub reached_signed: u64,
    pub violations: Vec<String>,
}

/// Runs every action sequence of length `max_len` against a fresh service
/// holding one pending submission. Checking after each step also covers
/// every shorter sequence as a prefix.
pub fn explore(max_len: u32) -> Exploration {
    let pki = pki();
    let trust = pki.trust_store();
    let benign = ReviewPolicy::default();
    let mut denylisted = ReviewPolicy::default();
    denylisted.digest_denylist.insert(sha256(FIRMWARE));

    let mut out = Exploration {
        sequences: (1..=max_len).map(|k| 6u64.pow(k)).sum(),
        ..Exploration::default()
    };
    let total = 6usize.pow(max_len);
    for n in 0..total {
        let seq: Vec<Action> = (0..max_len)
            .scan(n, |rest, _| {
                let a = ACTIONS[*rest % 6];
                *rest /= 6;
                Some(a)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let mut svc = open_service(dir.path(), &pki);
        let id = svc.submit(FIRMWARE, "1.0.0", "rtu", "uploader").unwrap().id;
        let mut state = State::Pending;
        let mut package: Option<Vec<u8>> = None;

        for (i, &action) in seq.iter().enumerate() {
            out.steps += 1;
            let prefix = &seq[..=i];
            let result: Result<(), ServiceError> = match action {
                Action::ReviewBenign => svc.review(&id, &benign, "admin").map(drop),
                Action::ReviewDenylisted => svc.review(&id, &denylisted, "admin").map(drop),
                Action::Sign => svc.sign(&id, ES256, "release", "admin").map(drop),
                Action::SignUnknownKey => svc.sign(&id, ES256, "retired", "admin").map(drop),
                Action::Download => svc.download(&id).map(|bytes| {
                    if !verify_update(&bytes, &trust, NOW).is_accepted() {
                        out.violations.push(format!("{prefix:?}: downloaded package does not verify"));
                    }
                    if let Some(prev) = &package {
                        if *prev != bytes {
                            out.violations.push(format!("{prefix:?}: package bytes changed"));
                        }
                    }
                    package = Some(bytes);
                }),
                Action::Restart => {
                    drop(svc);
                    svc = open_service(dir.path(), &pki);
                    Ok(())
                }
            };

            let expected = model(state, action);
            match (&expected, &result) {
                (Ok(_), Ok(())) => {}
                (Err(code), Err(e)) if *code == e.code() => {}
                _ => out
                    .violations
                    .push(format!("{prefix:?}: expected {expected:?}, got {result:?}")),
            }
            if let Ok(next) = expected {
                state = next;
            }

            let record = svc.get(&id).unwrap();
            if record.state != state {
                out.violations
                    .push(format!("{prefix:?}: stored state {:?}, model {state:?}", record.state));
            }
            if record.state == State::Signed {
                let approved_at = record.audit.iter().position(|e| e.to == State::ReviewedApproved);
                let signed_at = record.audit.iter().position(|e| e.to == State::Signed);
                let report_ok = record.review_report.as_ref().is_some_and(|r| r.is_approved());
                if !(approved_at < signed_at && approved_at.is_some() && report_ok) {
                    out.violations
                        .push(format!("{prefix:?}: signed without an approved review"));
                }
            }
            let transitions = record.audit.iter().filter(|e| e.from.is_some()).count();
            let expected_transitions = match record.state {
                State::Pending => 0,
                State::ReviewedApproved | State::ReviewedRejected => 1,
                State::Signed => 2,
            };
            if transitions != expected_transitions {
                out.violations.push(format!("{prefix:?}: audit has {transitions} transitions"));
            }
        }
        if state == State::Signed {
            out.reached_signed += 1;
        }
    }
    out
}
