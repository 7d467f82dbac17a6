//! Keys, certificates and trust stores on disk.
//!
//! Certificates may be DER or PEM; a PEM file may hold several certificates.
//! A trust store directory holds `issuer.der` and optionally `default/*.der`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use gridsign_core::cert::{CertError, Certificate, CertificateChain, TrustStore};
use gridsign_core::KeyPair;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Certificate {
        path: PathBuf,
        #[source]
        source: CertError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> FileError {
    FileError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>, FileError> {
    fs::read(path).map_err(io_err(path))
}

/// Splits a PEM file into `(label, der)` blocks.
pub fn pem_blocks(path: &Path, text: &str) -> Result<Vec<(String, Vec<u8>)>, FileError> {
    const END: &str = "-----END ";
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("-----BEGIN ") {
        let after = &rest[start..];
        let end_marker = after
            .find(END)
            .ok_or_else(|| format_err(path, "unterminated PEM block"))?;
        let end = after[end_marker..]
            .find('\n')
            .map(|i| end_marker + i + 1)
            .unwrap_or(after.len());
        let (label, der) = pem_rfc7468::decode_vec(&after.as_bytes()[..end])
            .map_err(|e| format_err(path, format!("bad PEM: {e}")))?;
        blocks.push((label.to_string(), der));
        rest = &after[end..];
    }
    Ok(blocks)
}

fn is_pem(bytes: &[u8]) -> bool {
    bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .is_some_and(|i| bytes[i..].starts_with(b"-----BEGIN "))
}

/// Loads a private key: PKCS#8 or SEC1, as PEM or DER.
pub fn read_key(path: &Path) -> Result<KeyPair, FileError> {
    let bytes = read(path)?;
    let bad = || format_err(path, "not a supported P-256 private key");
    if is_pem(&bytes) {
        let text = std::str::from_utf8(&bytes).map_err(|_| bad())?;
        let blocks = pem_blocks(path, text)?;
        for (label, der) in blocks {
            let key = match label.as_str() {
                "PRIVATE KEY" => KeyPair::from_pkcs8_der(&der),
                "EC PRIVATE KEY" => KeyPair::from_sec1_der(&der),
                _ => continue,
            };
            return key.map_err(|_| bad());
        }
        Err(bad())
    } else {
        KeyPair::from_pkcs8_der(&bytes)
            .or_else(|_| KeyPair::from_sec1_der(&bytes))
            .map_err(|_| bad())
    }
}

/// Every certificate in a DER or PEM file, in file order.
pub fn read_certs(path: &Path) -> Result<Vec<Certificate>, FileError> {
    let bytes = read(path)?;
    let ders = if is_pem(&bytes) {
        let text =
            std::str::from_utf8(&bytes).map_err(|_| format_err(path, "PEM is not UTF-8"))?;
        pem_blocks(path, text)?
            .into_iter()
            .filter(|(label, _)| label == "CERTIFICATE")
            .map(|(_, der)| der)
            .collect()
    } else {
        vec![bytes]
    };
    if ders.is_empty() {
        return Err(format_err(path, "no certificates found"));
    }
    ders.iter()
        .map(|der| {
            Certificate::from_der(der).map_err(|source| FileError::Certificate {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

/// Concatenates the certificates of `paths`, leaf first.
pub fn read_chain(paths: &[PathBuf]) -> Result<CertificateChain, FileError> {
    let mut certs = Vec::new();
    for p in paths {
        certs.extend(read_certs(p)?);
    }
    let first = paths.first().cloned().unwrap_or_default();
    CertificateChain::new(certs).map_err(|source| FileError::Certificate {
        path: first,
        source,
    })
}

pub fn read_trust_store(dir: &Path) -> Result<TrustStore, FileError> {
    let issuer_path = dir.join("issuer.der");
    let issuer = read_certs(&issuer_path)?
        .into_iter()
        .next()
        .ok_or_else(|| format_err(&issuer_path, "no certificate"))?;
    let mut default_set = Vec::new();
    let default_dir = dir.join("default");
    if default_dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&default_dir)
            .map_err(io_err(&default_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "der"))
            .collect();
        paths.sort();
        for p in paths {
            default_set.extend(read_certs(&p)?);
        }
    }
    Ok(TrustStore::new(issuer).with_default_set(default_set))
}

pub fn write_trust_store(dir: &Path, trust: &TrustStore) -> Result<(), FileError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("issuer.der"), trust.issuer.der())?;
    if !trust.default_set.is_empty() {
        let d = dir.join("default");
        fs::create_dir_all(&d).map_err(io_err(&d))?;
        for (i, c) in trust.default_set.iter().enumerate() {
            write_file(&d.join(format!("{i:02}.der")), c.der())?;
        }
    }
    Ok(())
}

pub fn cert_pem(cert: &Certificate) -> String {
    pem_rfc7468::encode_string("CERTIFICATE", pem_rfc7468::LineEnding::LF, cert.der())
        .expect("PEM encoding of in-memory bytes")
}

pub fn chain_pem(chain: &CertificateChain) -> String {
    chain.certs().iter().map(cert_pem).collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes `bytes` to a temporary file next to `path`, syncs it and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes a private key with owner-only permissions where supported.
pub fn write_secret(path: &Path, text: &str) -> Result<(), FileError> {
    #[cfg(unix)]
    {
        use std::io::Write;
        use std::os::unix::fs::OpenOptionsExt;
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .mode(0o600)
            .open(path)
            .map_err(io_err(path))?;
        f.write_all(text.as_bytes()).map_err(io_err(path))
    }
    #[cfg(not(unix))]
    write_file(path, text.as_bytes())
}
