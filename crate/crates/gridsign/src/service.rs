//! Upload, review, sign and download workflow with on-disk state.
//!
//! Layout under the data directory:
//!
//! ```text
//! submissions/<id>/record.json    state, review report, audit log
//! submissions/<id>/firmware.bin   uploaded bytes
//! submissions/<id>/package.cose   present once signed
//! products/<product>.json         last signed version per product
//! ```
//!
//! Every file is replaced by write-to-temp-then-rename, and a new submission
//! directory is populated before it is renamed into `submissions/`, so a
//! crash never leaves a half-written record.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use gridsign_core::cert::{Certificate, CertificateChain};
use gridsign_core::crypto::{sha256, SigningAlgorithm};
use gridsign_core::firmware::{package_firmware, FirmwarePackage};
use gridsign_core::review::{compare_versions, run_review, ReviewPolicy, ReviewReport};
use gridsign_core::KeyPair;
use serde::{Deserialize, Serialize};

use crate::files::write_atomic;

const RECORD_FILE: &str = "record.json";
const FIRMWARE_FILE: &str = "firmware.bin";
const PACKAGE_FILE: &str = "package.cose";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    Pending,
    ReviewedApproved,
    ReviewedRejected,
    Signed,
}

impl State {
    pub fn as_str(self) -> &'static str {
        match self {
            State::Pending => "pending",
            State::ReviewedApproved => "reviewed_approved",
            State::ReviewedRejected => "reviewed_rejected",
            State::Signed => "signed",
        }
    }

    /// The only edges of the workflow.
    pub fn can_become(self, next: State) -> bool {
        matches!(
            (self, next),
            (State::Pending, State::ReviewedApproved)
                | (State::Pending, State::ReviewedRejected)
                | (State::ReviewedApproved, State::Signed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub actor: String,
    pub action: String,
    pub at: u64,
    pub from: Option<State>,
    pub to: State,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub id: String,
    /// Hex SHA-256 of the uploaded firmware.
    pub digest: String,
    pub size: u64,
    pub version: String,
    pub product: String,
    pub state: State,
    pub review_report: Option<ReviewReport>,
    /// Relative to the submission directory.
    pub package_path: Option<String>,
    pub signed_with: Option<String>,
    pub audit: Vec<AuditEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no such submission")]
    NotFound,
    #[error("cannot {action} a submission in state {}", state.as_str())]
    InvalidState { state: State, action: &'static str },
    #[error("unknown key reference {0:?}")]
    UnknownKeyRef(String),
    #[error("key {key_ref:?} does not sign with {alg}")]
    AlgorithmMismatch { key_ref: String, alg: SigningAlgorithm },
    #[error("firmware is empty")]
    EmptyFirmware,
    #[error("firmware exceeds the upload limit of {limit} bytes")]
    PayloadTooLarge { limit: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
    #[error("signing failed: {0}")]
    Signing(String),
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound => "NotFound",
            ServiceError::InvalidState { .. } => "InvalidState",
            ServiceError::UnknownKeyRef(_) => "UnknownKeyRef",
            ServiceError::AlgorithmMismatch { .. } => "AlgorithmMismatch",
            ServiceError::EmptyFirmware => "EmptyFirmware",
            ServiceError::PayloadTooLarge { .. } => "PayloadTooLarge",
            ServiceError::InvalidRequest(_) => "InvalidRequest",
            ServiceError::Signing(_) => "SigningFailed",
            ServiceError::Storage(_) => "StorageFailure",
        }
    }
}

/// A configured signing identity.
#[derive(Debug, Clone)]
pub struct Signer {
    pub key: KeyPair,
    pub chain: CertificateChain,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ProductRecord {
    last_signed_version: Option<String>,
}

type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub struct SigningService {
    root: PathBuf,
    issuer: Certificate,
    signers: BTreeMap<String, Signer>,
    max_upload_bytes: u64,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    products: Mutex<()>,
    clock: Clock,
}

impl std::fmt::Debug for SigningService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningService")
            .field("root", &self.root)
            .field("signers", &self.signers.keys().collect::<Vec<_>>())
            .field("max_upload_bytes", &self.max_upload_bytes)
            .finish_non_exhaustive()
    }
}

fn system_clock() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl SigningService {
    /// Opens (or creates) the data directory. Leftovers of interrupted
    /// writes are removed.
    pub fn open(
        root: impl Into<PathBuf>,
        issuer: Certificate,
        signers: BTreeMap<String, Signer>,
        max_upload_bytes: u64,
    ) -> io::Result<Self> {
        let root = root.into();
        for sub in ["submissions", "products"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir)?;
            for entry in fs::read_dir(&dir)? {
                let entry = entry?;
                let name = entry.file_name();
                if name.to_string_lossy().starts_with(".") {
                    let p = entry.path();
                    if p.is_dir() {
                        fs::remove_dir_all(p)?;
                    } else {
                        fs::remove_file(p)?;
                    }
                }
            }
        }
        Ok(Self {
            root,
            issuer,
            signers,
            max_upload_bytes,
            locks: Mutex::new(HashMap::new()),
            products: Mutex::new(()),
            clock: Arc::new(system_clock),
        })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    /// The certificate devices should hold as their primary trust anchor.
    pub fn issuer(&self) -> &Certificate {
        &self.issuer
    }

    pub fn signer_names(&self) -> impl Iterator<Item = &str> {
        self.signers.keys().map(String::as_str)
    }

    pub fn max_upload_bytes(&self) -> u64 {
        self.max_upload_bytes
    }

    fn dir(&self, id: &str) -> Result<PathBuf, ServiceError> {
        if id.len() != 32 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(ServiceError::NotFound);
        }
        let dir = self.root.join("submissions").join(id);
        if !dir.is_dir() {
            return Err(ServiceError::NotFound);
        }
        Ok(dir)
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn load(&self, dir: &Path) -> Result<SubmissionRecord, ServiceError> {
        let bytes = fs::read(dir.join(RECORD_FILE))?;
        serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e).into())
    }

    fn save(&self, dir: &Path, record: &SubmissionRecord) -> Result<(), ServiceError> {
        let json = serde_json::to_vec_pretty(record).map_err(io::Error::other)?;
        write_atomic(&dir.join(RECORD_FILE), &json)?;
        Ok(())
    }

    fn transition(&self, record: &mut SubmissionRecord, actor: &str, action: &str, to: State) {
        debug_assert!(record.state.can_become(to));
        record.audit.push(AuditEntry {
            actor: actor.to_string(),
            action: action.to_string(),
            at: (self.clock)(),
            from: Some(record.state),
            to,
        });
        record.state = to;
        tracing::info!(id = %record.id, actor, action, state = to.as_str(), "transition");
    }

    pub fn submit(
        &self,
        firmware: &[u8],
        version: &str,
        product: &str,
        actor: &str,
    ) -> Result<SubmissionRecord, ServiceError> {
        if firmware.is_empty() {
            return Err(ServiceError::EmptyFirmware);
        }
        if firmware.len() as u64 > self.max_upload_bytes {
            return Err(ServiceError::PayloadTooLarge {
                limit: self.max_upload_bytes,
            });
        }
        if version.is_empty() || version.len() > 64 || version.chars().any(char::is_control) {
            return Err(ServiceError::InvalidRequest("version"));
        }
        if !valid_product(product) {
            return Err(ServiceError::InvalidRequest("product"));
        }

        let id = uuid::Uuid::new_v4().simple().to_string();
        let record = SubmissionRecord {
            id: id.clone(),
            digest: hex::encode(sha256(firmware)),
            size: firmware.len() as u64,
            version: version.to_string(),
            product: product.to_string(),
            state: State::Pending,
            review_report: None,
            package_path: None,
            signed_with: None,
            audit: vec![AuditEntry {
                actor: actor.to_string(),
                action: "submit".into(),
                at: (self.clock)(),
                from: None,
                to: State::Pending,
            }],
        };

        let submissions = self.root.join("submissions");
        let staging = tempfile::Builder::new()
            .prefix(".new-")
            .tempdir_in(&submissions)?;
        fs::write(staging.path().join(FIRMWARE_FILE), firmware)?;
        fs::File::open(staging.path().join(FIRMWARE_FILE))?.sync_all()?;
        self.save(staging.path(), &record)?;
        fs::rename(staging.keep(), submissions.join(&id))?;
        tracing::info!(id = %id, actor, product, version, "submitted");
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Result<SubmissionRecord, ServiceError> {
        let dir = self.dir(id)?;
        self.load(&dir)
    }

    pub fn list(&self) -> Result<Vec<SubmissionRecord>, ServiceError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("submissions"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Ok(r) = self.get(&name) {
                out.push(r);
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn last_signed_version(&self, product: &str) -> Result<Option<String>, ServiceError> {
        let path = self.root.join("products").join(format!("{product}.json"));
        match fs::read(&path) {
            Ok(bytes) => {
                let rec: ProductRecord = serde_json::from_slice(&bytes)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                Ok(rec.last_signed_version)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn review(&self, id: &str, policy: &ReviewPolicy, actor: &str) -> Result<SubmissionRecord, ServiceError> {
        let dir = self.dir(id)?;
        let lock = self.lock_for(id);
        let _guard = lock.lock().expect("record lock");
        let mut record = self.load(&dir)?;
        if record.state != State::Pending {
            return Err(ServiceError::InvalidState {
                state: record.state,
                action: "review",
            });
        }
        let firmware = fs::read(dir.join(FIRMWARE_FILE))?;
        let history = self.last_signed_version(&record.product)?;
        let report = run_review(&firmware, &record.version, policy, history.as_deref());
        let next = if report.is_approved() {
            State::ReviewedApproved
        } else {
            State::ReviewedRejected
        };
        record.review_report = Some(report);
        self.transition(&mut record, actor, "review", next);
        self.save(&dir, &record)?;
        Ok(record)
    }

    pub fn sign(
        &self,
        id: &str,
        alg: SigningAlgorithm,
        key_ref: &str,
        actor: &str,
    ) -> Result<SubmissionRecord, ServiceError> {
        let dir = self.dir(id)?;
        let lock = self.lock_for(id);
        let _guard = lock.lock().expect("record lock");
        let mut record = self.load(&dir)?;
        let approved = record.state == State::ReviewedApproved
            && record.review_report.as_ref().is_some_and(ReviewReport::is_approved);
        if !approved {
            return Err(ServiceError::InvalidState {
                state: record.state,
                action: "sign",
            });
        }
        let signer = self
            .signers
            .get(key_ref)
            .ok_or_else(|| ServiceError::UnknownKeyRef(key_ref.to_string()))?;
        if signer.key.algorithm() != alg {
            return Err(ServiceError::AlgorithmMismatch {
                key_ref: key_ref.to_string(),
                alg,
            });
        }

        let firmware = fs::read(dir.join(FIRMWARE_FILE))?;
        if hex::encode(sha256(&firmware)) != record.digest {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "stored firmware changed").into());
        }
        let package = FirmwarePackage::new(firmware, record.version.clone())
            .map_err(|e| ServiceError::Signing(e.to_string()))?;
        let cose = package_firmware(&package, &signer.key, &signer.chain, alg, (self.clock)())
            .map_err(|e| ServiceError::Signing(e.to_string()))?;
        write_atomic(&dir.join(PACKAGE_FILE), &cose)?;

        record.package_path = Some(PACKAGE_FILE.to_string());
        record.signed_with = Some(key_ref.to_string());
        self.transition(&mut record, actor, "sign", State::Signed);
        self.save(&dir, &record)?;
        self.note_signed(&record.product, &record.version)?;
        Ok(record)
    }

    fn note_signed(&self, product: &str, version: &str) -> Result<(), ServiceError> {
        let _guard = self.products.lock().expect("product lock");
        let current = self.last_signed_version(product)?;
        let newer = current
            .as_deref()
            .is_none_or(|c| compare_versions(version, c) == std::cmp::Ordering::Greater);
        if newer {
            let rec = ProductRecord {
                last_signed_version: Some(version.to_string()),
            };
            let json = serde_json::to_vec(&rec).map_err(io::Error::other)?;
            write_atomic(&self.root.join("products").join(format!("{product}.json")), &json)?;
        }
        Ok(())
    }

    /// The exact `.cose` bytes written at signing time.
    pub fn download(&self, id: &str) -> Result<Vec<u8>, ServiceError> {
        let dir = self.dir(id)?;
        let record = self.load(&dir)?;
        match (record.state, record.package_path) {
            (State::Signed, Some(p)) => Ok(fs::read(dir.join(p))?),
            (state, _) => Err(ServiceError::InvalidState {
                state,
                action: "download",
            }),
        }
    }
}

fn valid_product(p: &str) -> bool {
    !p.is_empty()
        && p.len() <= 64
        && !p.starts_with('.')
        && p.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridsign_core::testpki::{TestPki, DEFAULT_NOT_BEFORE};
    use gridsign_core::verify_update;

    const NOW: u64 = DEFAULT_NOT_BEFORE + 100;

    fn service(root: &Path) -> (SigningService, TestPki) {
        let pki = TestPki::generate(77, 2);
        let mut signers = BTreeMap::new();
        signers.insert(
            "release".to_string(),
            Signer {
                key: pki.leaf_key.clone(),
                chain: pki.chain.clone(),
            },
        );
        let svc = SigningService::open(root, pki.root.clone(), signers, 1 << 20)
            .unwrap()
            .with_clock(|| NOW);
        (svc, pki)
    }

    const ES256: SigningAlgorithm = SigningAlgorithm::EcdsaP256Sha256;

    #[test]
    fn happy_path() {
        let dir = tempfile::tempdir().unwrap();
        let (svc, pki) = service(dir.path());
        let r = svc.submit(b"firmware", "1.0.0", "meter", "dev").unwrap();
        assert_eq!(r.state, State::Pending);
        assert_eq!(r.digest, hex::encode(sha256(b"firmware")));
        let r = svc.review(&r.id, &ReviewPolicy::default(), "admin").unwrap();
        assert_eq!(r.state, State::ReviewedApproved);
        let r = svc.sign(&r.id, ES256, "release", "admin").unwrap();
        assert_eq!(r.state, State::Signed);
        assert_eq!(r.audit.len(), 3);
        let pkg = svc.download(&r.id).unwrap();
        assert_eq!(pkg, svc.download(&r.id).unwrap());
        let report = verify_update(&pkg, &pki.trust_store(), NOW);
        assert!(report.is_accepted());
        assert_eq!(svc.last_signed_version("meter").unwrap().as_deref(), Some("1.0.0"));
    }

    #[test]
    fn gate_and_state_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (svc, _) = service(dir.path());
        let r = svc.submit(b"bad", "1", "meter", "dev").unwrap();
        assert!(matches!(svc.sign(&r.id, ES256, "release", "a"), Err(ServiceError::InvalidState { .. })));
        assert!(matches!(svc.download(&r.id), Err(ServiceError::InvalidState { .. })));
        let mut policy = ReviewPolicy::default();
        policy.digest_denylist.insert(sha256(b"bad"));
        let r = svc.review(&r.id, &policy, "admin").unwrap();
        assert_eq!(r.state, State::ReviewedRejected);
        assert!(matches!(svc.sign(&r.id, ES256, "release", "a"), Err(ServiceError::InvalidState { .. })));
        assert!(matches!(svc.review(&r.id, &policy, "a"), Err(ServiceError::InvalidState { .. })));

        let ok = svc.submit(b"good", "1", "meter", "dev").unwrap();
        svc.review(&ok.id, &ReviewPolicy::default(), "admin").unwrap();
        assert!(matches!(svc.sign(&ok.id, ES256, "nope", "a"), Err(ServiceError::UnknownKeyRef(_))));
        svc.sign(&ok.id, ES256, "release", "a").unwrap();
        assert!(matches!(svc.review(&ok.id, &policy, "a"), Err(ServiceError::InvalidState { .. })));
        assert!(matches!(svc.sign(&ok.id, ES256, "release", "a"), Err(ServiceError::InvalidState { .. })));
    }

    #[test]
    fn submission_validation() {
        let dir = tempfile::tempdir().unwrap();
        let (svc, _) = service(dir.path());
        assert!(matches!(svc.submit(b"", "1", "m", "d"), Err(ServiceError::EmptyFirmware)));
        assert!(matches!(
            svc.submit(&vec![0; (1 << 20) + 1], "1", "m", "d"),
            Err(ServiceError::PayloadTooLarge { .. })
        ));
        assert!(matches!(svc.submit(b"x", "", "m", "d"), Err(ServiceError::InvalidRequest(_))));
        for bad in ["", "../x", ".hidden", "a/b"] {
            assert!(matches!(svc.submit(b"x", "1", bad, "d"), Err(ServiceError::InvalidRequest(_))));
        }
        let a = svc.submit(b"same", "1", "m", "d").unwrap();
        let b = svc.submit(b"same", "1", "m", "d").unwrap();
        assert_ne!(a.id, b.id);
        assert!(matches!(svc.get("../../etc"), Err(ServiceError::NotFound)));
        assert!(matches!(svc.get(&"0".repeat(32)), Err(ServiceError::NotFound)));
        assert_eq!(svc.list().unwrap().len(), 2);
    }

    #[test]
    fn monotonic_versions_against_signed_history() {
        let dir = tempfile::tempdir().unwrap();
        let (svc, _) = service(dir.path());
        let policy = ReviewPolicy::default();
        let r = svc.submit(b"v2", "1.2.0", "meter", "d").unwrap();
        svc.review(&r.id, &policy, "a").unwrap();
        svc.sign(&r.id, ES256, "release", "a").unwrap();
        let old = svc.submit(b"v1", "1.0.0", "meter", "d").unwrap();
        assert_eq!(svc.review(&old.id, &policy, "a").unwrap().state, State::ReviewedRejected);
        let other = svc.submit(b"v1", "1.0.0", "relay", "d").unwrap();
        assert_eq!(svc.review(&other.id, &policy, "a").unwrap().state, State::ReviewedApproved);
    }

    #[test]
    fn restart_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let (svc, _) = service(dir.path());
            svc.submit(b"fw", "1", "m", "d").unwrap().id
        };
        let (svc, _) = service(dir.path());
        assert_eq!(svc.get(&id).unwrap().state, State::Pending);
        svc.review(&id, &ReviewPolicy::default(), "a").unwrap();
        drop(svc);
        let (svc, _) = service(dir.path());
        assert_eq!(svc.get(&id).unwrap().state, State::ReviewedApproved);
        svc.sign(&id, ES256, "release", "a").unwrap();
        let pkg = svc.download(&id).unwrap();
        drop(svc);
        let (svc, _) = service(dir.path());
        assert_eq!(svc.download(&id).unwrap(), pkg);
        assert_eq!(svc.get(&id).unwrap().audit.len(), 3);
    }

    #[test]
    fn leftovers_are_cleaned_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let (svc, _) = service(dir.path());
        drop(svc);
        let junk = dir.path().join("submissions").join(".new-crashed");
        fs::create_dir_all(&junk).unwrap();
        fs::write(junk.join(RECORD_FILE), b"{").unwrap();
        let (svc, _) = service(dir.path());
        assert!(!junk.exists());
        assert!(svc.list().unwrap().is_empty());
    }

    #[test]
    fn transition_table() {
        use State::*;
        let all = [Pending, ReviewedApproved, ReviewedRejected, Signed];
        let edges: Vec<_> = all
            .iter()
            .flat_map(|a| all.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.can_become(*b))
            .collect();
        assert_eq!(
            edges,
            [(Pending, ReviewedApproved), (Pending, ReviewedRejected), (ReviewedApproved, Signed)]
        );
    }
}
