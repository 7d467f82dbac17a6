//! Pre-signature review: a policy gate every firmware file passes before it
//! can be signed.
//!
//! Built-in checks run first, in a fixed order, followed by any external
//! scanner plugins. A report is approved iff no check failed; warnings never
//! block.

use alloc::{
    boxed::Box,
    collections::BTreeSet,
    format,
    string::{String, ToString},
    sync::Arc,
    vec::Vec,
};
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::sha256;

pub const CHECK_SIZE_LIMIT: &str = "size_limit";
pub const CHECK_DIGEST_DENYLIST: &str = "digest_denylist";
pub const CHECK_VERSION_MONOTONIC: &str = "version_monotonic";
pub const CHECK_ENTROPY: &str = "entropy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Warn,
}

impl CheckStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Warn => "warn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub checks: Vec<CheckResult>,
    pub verdict: Verdict,
}

impl ReviewReport {
    pub fn from_checks(checks: Vec<CheckResult>) -> Self {
        let verdict = if checks.iter().any(|c| c.status == CheckStatus::Fail) {
            Verdict::Rejected
        } else {
            Verdict::Approved
        };
        Self { checks, verdict }
    }

    pub fn is_approved(&self) -> bool {
        self.verdict == Verdict::Approved
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

/// What a plugin sees of the file under review.
#[derive(Debug, Clone, Copy)]
pub struct PluginInput<'a> {
    pub digest: &'a [u8; 32],
    pub size: u64,
    pub version: &'a str,
    pub firmware: &'a [u8],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginVerdict {
    pub status: CheckStatus,
    pub detail: String,
}

/// A plugin could not produce a verdict.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("plugin failure: {0}")]
pub struct PluginFailure(pub String);

/// An external scanner. Plugins that are not deterministic must say so;
/// callers then wrap them in a result cache keyed by digest.
pub trait ReviewPlugin: Send + Sync {
    fn name(&self) -> &str;

    fn deterministic(&self) -> bool {
        true
    }

    fn check(&self, input: &PluginInput<'_>) -> Result<PluginVerdict, PluginFailure>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("max_size_bytes must be positive")]
    ZeroSizeLimit,
    #[error("entropy threshold {0} is outside [0, 8]")]
    EntropyThreshold(f64),
}

#[derive(Clone)]
pub struct ReviewPolicy {
    pub max_size_bytes: u64,
    pub digest_denylist: BTreeSet<[u8; 32]>,
    pub require_version_monotonic: bool,
    /// Bits per byte.
    pub entropy_warning_threshold: f64,
    pub external_scanners: Vec<Arc<dyn ReviewPlugin>>,
}

impl fmt::Debug for ReviewPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReviewPolicy")
            .field("max_size_bytes", &self.max_size_bytes)
            .field("digest_denylist", &self.digest_denylist.len())
            .field("require_version_monotonic", &self.require_version_monotonic)
            .field("entropy_warning_threshold", &self.entropy_warning_threshold)
            .field(
                "external_scanners",
                &self.external_scanners.iter().map(|p| p.name()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        Self {
            max_size_bytes: 256 * 1024 * 1024,
            digest_denylist: BTreeSet::new(),
            require_version_monotonic: true,
            entropy_warning_threshold: 7.9,
            external_scanners: Vec::new(),
        }
    }
}

impl ReviewPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_size_bytes == 0 {
            return Err(PolicyError::ZeroSizeLimit);
        }
        let t = self.entropy_warning_threshold;
        if !(0.0..=8.0).contains(&t) {
            return Err(PolicyError::EntropyThreshold(t));
        }
        Ok(())
    }

    pub fn with_plugin(mut self, plugin: impl ReviewPlugin + 'static) -> Self {
        self.external_scanners.push(Arc::new(plugin));
        self
    }
}

/// Reviews `firmware` against `policy`. `history` is the last version signed
/// for the same product, if any.
pub fn run_review(
    firmware: &[u8],
    version: &str,
    policy: &ReviewPolicy,
    history: Option<&str>,
) -> ReviewReport {
    let digest = sha256(firmware);
    let size = firmware.len() as u64;
    let mut checks = Vec::with_capacity(4 + policy.external_scanners.len());
    let mut push = |name: &str, status, detail: String| {
        checks.push(CheckResult {
            name: name.to_string(),
            status,
            detail,
        })
    };

    if size <= policy.max_size_bytes {
        push(CHECK_SIZE_LIMIT, CheckStatus::Pass, format!("{size} bytes"));
    } else {
        push(
            CHECK_SIZE_LIMIT,
            CheckStatus::Fail,
            format!("{size} bytes exceeds limit of {}", policy.max_size_bytes),
        );
    }

    if policy.digest_denylist.contains(&digest) {
        push(
            CHECK_DIGEST_DENYLIST,
            CheckStatus::Fail,
            format!("digest {} is denylisted", hex(&digest)),
        );
    } else {
        push(CHECK_DIGEST_DENYLIST, CheckStatus::Pass, String::from("not listed"));
    }

    match (policy.require_version_monotonic, history) {
        (_, _) if version.is_empty() => {
            push(CHECK_VERSION_MONOTONIC, CheckStatus::Fail, String::from("empty version"))
        }
        (true, Some(last)) if compare_versions(version, last) != Ordering::Greater => push(
            CHECK_VERSION_MONOTONIC,
            CheckStatus::Fail,
            format!("{version} is not newer than last signed {last}"),
        ),
        (true, Some(last)) => push(
            CHECK_VERSION_MONOTONIC,
            CheckStatus::Pass,
            format!("{version} > {last}"),
        ),
        (true, None) => push(
            CHECK_VERSION_MONOTONIC,
            CheckStatus::Pass,
            String::from("no previous version"),
        ),
        (false, _) => push(
            CHECK_VERSION_MONOTONIC,
            CheckStatus::Pass,
            String::from("not required"),
        ),
    }

    let entropy = shannon_entropy(firmware);
    let status = if entropy > policy.entropy_warning_threshold {
        CheckStatus::Warn
    } else {
        CheckStatus::Pass
    };
    push(CHECK_ENTROPY, status, format!("{entropy:.3} bits/byte"));

    let input = PluginInput {
        digest: &digest,
        size,
        version,
        firmware,
    };
    for plugin in &policy.external_scanners {
        match plugin.check(&input) {
            Ok(v) => push(plugin.name(), v.status, v.detail),
            Err(e) => push(plugin.name(), CheckStatus::Fail, e.to_string()),
        }
    }

    ReviewReport::from_checks(checks)
}

/// Shannon entropy of the byte histogram, in bits per byte.
pub fn shannon_entropy(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = Box::new([0u64; 256]);
    for &b in data {
        counts[b as usize] += 1;
    }
    let n = data.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log2(p)
        })
        .sum()
}

/// Dotted-numeric ordering. Segments that are not both numeric compare
/// lexicographically; missing segments count as `0`.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.split('.'), b.split('.'));
    loop {
        let (x, y) = match (ai.next(), bi.next()) {
            (None, None) => return Ordering::Equal,
            (x, y) => (x.unwrap_or("0"), y.unwrap_or("0")),
        };
        let ord = match (x.parse::<u64>(), y.parse::<u64>()) {
            (Ok(p), Ok(q)) => p.cmp(&q),
            _ => x.cmp(y),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}
