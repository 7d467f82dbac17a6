//! Storing verified firmware on the device side.
//!
//! Each accepted update lands in `<dest>/<version>-<digest prefix>/` with
//! `firmware.bin` and `metadata.json`. Both files are written into a hidden
//! staging directory first, which is then renamed into place, so a reader
//! never sees one without the other.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use gridsign_core::verifier::{Outcome, VerificationReport};
use gridsign_core::AnchoredBy;
use serde::{Deserialize, Serialize};

pub const FIRMWARE_FILE: &str = "firmware.bin";
pub const METADATA_FILE: &str = "metadata.json";
const STAGING_PREFIX: &str = ".staging-";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("cannot store payload: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("only accepted updates can be stored")]
    PreconditionViolated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredMetadata {
    pub version: String,
    /// Lowercase hex SHA-256 of `firmware.bin`.
    pub digest: String,
    pub size: u64,
    pub anchored_by: AnchoredBy,
    pub timestamp: Option<u64>,
    pub signer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    AfterFirmware,
    BeforeRename,
}

/// Writes the accepted firmware and its metadata under `dest` and returns the
/// firmware path.
pub fn store_payload(report: &VerificationReport, dest: &Path) -> Result<PathBuf, StoreError> {
    store(report, dest, None)
}

fn store(report: &VerificationReport, dest: &Path, fault: Option<Fault>) -> Result<PathBuf, StoreError> {
    let Outcome::Accepted(update) = &report.outcome else {
        return Err(StoreError::PreconditionViolated);
    };
    let package = &update.package;
    let digest = hex::encode(package.digest());
    let meta = StoredMetadata {
        version: package.version().to_string(),
        digest: digest.clone(),
        size: package.firmware().len() as u64,
        anchored_by: report.anchored_by,
        timestamp: update.timestamp,
        signer: update.signer.clone(),
    };

    fs::create_dir_all(dest)?;
    let final_dir = dest.join(format!("{}-{}", sanitize(package.version()), &digest[..16]));
    let final_fw = final_dir.join(FIRMWARE_FILE);
    if final_dir.join(METADATA_FILE).is_file() {
        return Ok(final_fw);
    }

    let staging = tempfile::Builder::new()
        .prefix(STAGING_PREFIX)
        .tempdir_in(dest)?;
    write_synced(&staging.path().join(FIRMWARE_FILE), package.firmware())?;
    if fault == Some(Fault::AfterFirmware) {
        return Err(crash(staging));
    }
    let json = serde_json::to_vec_pretty(&meta).map_err(io::Error::other)?;
    write_synced(&staging.path().join(METADATA_FILE), &json)?;
    if fault == Some(Fault::BeforeRename) {
        return Err(crash(staging));
    }

    let staged = staging.keep();
    if let Err(e) = fs::rename(&staged, &final_dir) {
        let _ = fs::remove_dir_all(&staged);
        if final_dir.join(METADATA_FILE).is_file() {
            return Ok(final_fw);
        }
        return Err(e.into());
    }
    if let Ok(d) = fs::File::open(dest) {
        let _ = d.sync_all();
    }
    Ok(final_fw)
}

/// Simulates the process dying: the staging directory is left behind.
fn crash(staging: tempfile::TempDir) -> StoreError {
    let _ = staging.keep();
    io::Error::other("injected fault").into()
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn sanitize(version: &str) -> String {
    version
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._+".contains(c) { c } else { '_' })
        .collect()
}

/// Completed entries under `dest`, ignoring staging leftovers.
pub fn stored_entries(dest: &Path) -> io::Result<Vec<(PathBuf, StoredMetadata)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dest)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(STAGING_PREFIX) || !path.is_dir() {
            continue;
        }
        if let Ok(bytes) = fs::read(path.join(METADATA_FILE)) {
            if let Ok(meta) = serde_json::from_slice(&bytes) {
                out.push((path, meta));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
