//! Service configuration.
//!
//! ```toml
//! listen = "127.0.0.1:8440"
//! data_dir = "data"
//! issuer_cert = "pki/issuer.der"
//! policy = "policy.toml"
//! max_upload_bytes = 268435456
//!
//! [[signers]]
//! name = "release"
//! key = "pki/leaf.key.pem"
//! chain = ["pki/chain.pem"]
//!
//! [[tokens]]
//! name = "ci"
//! role = "uploader"
//! token_env = "GRIDSIGN_CI_TOKEN"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! A token is given either inline (`token`) or through an environment
//! variable (`token_env`).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use gridsign_core::review::ReviewPolicy;
use serde::Deserialize;

use crate::files::{read_certs, read_chain, read_key, FileError};
use crate::http::{ApiToken, Role};
use crate::policy::{load_policy, PolicyFileError};
use crate::service::Signer;

pub const DEFAULT_MAX_UPLOAD: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub issuer_cert: PathBuf,
    pub policy: Option<PathBuf>,
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: u64,
    #[serde(default)]
    pub signers: Vec<SignerConfig>,
    #[serde(default)]
    pub tokens: Vec<TokenConfig>,
}

fn default_max_upload() -> u64 {
    DEFAULT_MAX_UPLOAD
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignerConfig {
    pub name: String,
    pub key: PathBuf,
    pub chain: Vec<PathBuf>,
}

#[derive(Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenConfig {
    pub name: String,
    pub role: Role,
    pub token: Option<String>,
    pub token_env: Option<String>,
}

impl std::fmt::Debug for TokenConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TokenConfig")
            .field("name", &self.name)
            .field("role", &self.role)
            .field("token_env", &self.token_env)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Syntax {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Policy(#[from] PolicyFileError),
    #[error("{0}")]
    Invalid(String),
}

/// Everything the service needs, loaded from disk.
#[derive(Debug)]
pub struct Loaded {
    pub config: ServiceConfig,
    pub data_dir: PathBuf,
    pub issuer: gridsign_core::Certificate,
    pub signers: BTreeMap<String, Signer>,
    pub policy: ReviewPolicy,
    pub tokens: Vec<ApiToken>,
}

pub fn parse_config(text: &str, path: &Path) -> Result<ServiceConfig, ConfigError> {
    toml::from_str(text).map_err(|source| ConfigError::Syntax {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_config(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_config(&text, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(config, base, |name| std::env::var(name).ok())
}

pub fn resolve(
    config: ServiceConfig,
    base: &Path,
    env: impl Fn(&str) -> Option<String>,
) -> Result<Loaded, ConfigError> {
    let at = |p: &Path| base.join(p);

    let issuer = read_certs(&at(&config.issuer_cert))?.remove(0);

    let mut signers = BTreeMap::new();
    for s in &config.signers {
        let key = read_key(&at(&s.key))?;
        let chain_paths: Vec<PathBuf> = s.chain.iter().map(|p| at(p)).collect();
        let chain = read_chain(&chain_paths)?;
        if chain.leaf().public_key() != key.public_key() {
            return Err(ConfigError::Invalid(format!(
                "signer {:?}: key does not match the chain's leaf certificate",
                s.name
            )));
        }
        if signers.insert(s.name.clone(), Signer { key, chain }).is_some() {
            return Err(ConfigError::Invalid(format!("duplicate signer {:?}", s.name)));
        }
    }

    let policy = match &config.policy {
        Some(p) => load_policy(&at(p))?,
        None => ReviewPolicy::default(),
    };

    let mut tokens = Vec::new();
    for t in &config.tokens {
        let secret = match (&t.token, &t.token_env) {
            (Some(s), None) => s.clone(),
            (None, Some(var)) => env(var).ok_or_else(|| {
                ConfigError::Invalid(format!("token {:?}: ${var} is not set", t.name))
            })?,
            _ => {
                return Err(ConfigError::Invalid(format!(
                    "token {:?}: give exactly one of token or token_env",
                    t.name
                )))
            }
        };
        if secret.len() < 16 {
            return Err(ConfigError::Invalid(format!(
                "token {:?}: secret must be at least 16 characters",
                t.name
            )));
        }
        tokens.push(ApiToken {
            name: t.name.clone(),
            role: t.role,
            secret,
        });
    }
    if config.max_upload_bytes == 0 {
        return Err(ConfigError::Invalid("max_upload_bytes must be positive".into()));
    }

    Ok(Loaded {
        data_dir: at(&config.data_dir),
        config,
        issuer,
        signers,
        policy,
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::files::{chain_pem, write_file, write_secret};
    use gridsign_core::testpki::TestPki;

    fn fixture(dir: &Path) {
        let pki = TestPki::generate(9, 2);
        write_file(&dir.join("issuer.der"), pki.root.der()).unwrap();
        write_file(&dir.join("chain.pem"), chain_pem(&pki.chain).as_bytes()).unwrap();
        write_secret(&dir.join("leaf.pem"), &pki.leaf_key.to_pkcs8_pem().unwrap()).unwrap();
        let other = TestPki::generate(10, 1);
        write_secret(&dir.join("other.pem"), &other.leaf_key.to_pkcs8_pem().unwrap()).unwrap();
    }

    const BASE: &str = r#"
        listen = "127.0.0.1:0"
        data_dir = "data"
        issuer_cert = "issuer.der"
        [[signers]]
        name = "release"
        key = "leaf.pem"
        chain = ["chain.pem"]
    "#;

    #[test]
    fn loads_relative_paths_and_env_tokens() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let text = format!(
            "{BASE}\n[[tokens]]\nname = \"ci\"\nrole = \"uploader\"\ntoken_env = \"CI_TOKEN\"\n"
        );
        let cfg = parse_config(&text, Path::new("x")).unwrap();
        let loaded = resolve(cfg, dir.path(), |v| {
            (v == "CI_TOKEN").then(|| "0123456789abcdef".to_string())
        })
        .unwrap();
        assert_eq!(loaded.data_dir, dir.path().join("data"));
        assert_eq!(loaded.tokens[0].role, Role::Uploader);
        assert!(loaded.signers.contains_key("release"));
        assert_eq!(loaded.config.max_upload_bytes, DEFAULT_MAX_UPLOAD);

        let cfg = parse_config(&text, Path::new("x")).unwrap();
        assert!(matches!(resolve(cfg, dir.path(), |_| None), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rejects_mismatched_key_and_bad_tokens() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let cfg = parse_config(&BASE.replace("leaf.pem", "other.pem"), Path::new("x")).unwrap();
        assert!(matches!(resolve(cfg, dir.path(), |_| None), Err(ConfigError::Invalid(_))));

        let short = format!("{BASE}\n[[tokens]]\nname = \"a\"\nrole = \"admin\"\ntoken = \"short\"\n");
        let cfg = parse_config(&short, Path::new("x")).unwrap();
        assert!(matches!(resolve(cfg, dir.path(), |_| None), Err(ConfigError::Invalid(_))));

        assert!(parse_config("listen = 1", Path::new("x")).is_err());
        assert!(parse_config(&format!("{BASE}\nbogus = 1"), Path::new("x")).is_err());
    }
}
