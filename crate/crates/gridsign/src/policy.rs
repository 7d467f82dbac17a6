//! Review policy files and external scanner plugins.
//!
//! ```toml
//! max_size_bytes = 67108864
//! denylist = "denylist.txt"          # hex SHA-256 per line, relative to this file
//! require_version_monotonic = true
//! entropy_warning_threshold = 7.9
//!
//! [[plugins]]
//! name = "scanner"
//! command = "/opt/scan/run"
//! args = ["--quick"]
//! deterministic = true
//! timeout_secs = 60
//! ```
//!
//! A plugin process gets `GRIDSIGN_DIGEST`, `GRIDSIGN_SIZE` and
//! `GRIDSIGN_VERSION` in its environment and the firmware on stdin. Its first
//! stdout line is `pass`, `warn` or `fail`, optionally followed by a detail
//! text. A non-zero exit, a timeout or any other output counts as a plugin
//! failure.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gridsign_core::review::{
    CheckStatus, PluginFailure, PluginInput, PluginVerdict, PolicyError, ReviewPlugin, ReviewPolicy,
};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum PolicyFileError {
    #[error("{path}: {source}")]
    Io {
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
    #[error("{path}:{line}: not a hex SHA-256 digest")]
    Denylist { path: PathBuf, line: usize },
    #[error(transparent)]
    Invalid(#[from] PolicyError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub max_size_bytes: Option<u64>,
    pub denylist: Option<PathBuf>,
    pub require_version_monotonic: Option<bool>,
    pub entropy_warning_threshold: Option<f64>,
    #[serde(default)]
    pub plugins: Vec<PluginSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginSpec {
    pub name: String,
    pub command: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "yes")]
    pub deterministic: bool,
    pub timeout_secs: Option<u64>,
}

fn yes() -> bool {
    true
}

/// Loads a policy file; relative paths in it resolve against its directory.
pub fn load_policy(path: &Path) -> Result<ReviewPolicy, PolicyFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| PolicyFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: PolicyFile = toml::from_str(&text).map_err(|source| PolicyFileError::Syntax {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    build_policy(file, base)
}

pub fn build_policy(file: PolicyFile, base: &Path) -> Result<ReviewPolicy, PolicyFileError> {
    let defaults = ReviewPolicy::default();
    let mut policy = ReviewPolicy {
        max_size_bytes: file.max_size_bytes.unwrap_or(defaults.max_size_bytes),
        digest_denylist: BTreeSet::new(),
        require_version_monotonic: file
            .require_version_monotonic
            .unwrap_or(defaults.require_version_monotonic),
        entropy_warning_threshold: file
            .entropy_warning_threshold
            .unwrap_or(defaults.entropy_warning_threshold),
        external_scanners: Vec::new(),
    };
    if let Some(list) = file.denylist {
        let list = base.join(list);
        policy.digest_denylist = read_denylist(&list)?;
    }
    for spec in file.plugins {
        let command = if spec.command.components().count() > 1 {
            base.join(&spec.command)
        } else {
            spec.command.clone()
        };
        let plugin = ExecPlugin {
            name: spec.name,
            command,
            args: spec.args,
            deterministic: spec.deterministic,
            timeout: Duration::from_secs(spec.timeout_secs.unwrap_or(300)),
        };
        policy.external_scanners.push(prepare(Arc::new(plugin)));
    }
    policy.validate()?;
    Ok(policy)
}

pub fn read_denylist(path: &Path) -> Result<BTreeSet<[u8; 32]>, PolicyFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| PolicyFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut set = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut digest = [0u8; 32];
        hex::decode_to_slice(line, &mut digest).map_err(|_| PolicyFileError::Denylist {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        set.insert(digest);
    }
    Ok(set)
}

/// Wraps a plugin so panics become failures and non-deterministic results
/// are cached per digest.
pub fn prepare(plugin: Arc<dyn ReviewPlugin>) -> Arc<dyn ReviewPlugin> {
    let guarded: Arc<dyn ReviewPlugin> = Arc::new(Guarded(plugin));
    if guarded.deterministic() {
        guarded
    } else {
        Arc::new(Cached::new(guarded))
    }
}

struct Guarded(Arc<dyn ReviewPlugin>);

impl ReviewPlugin for Guarded {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn deterministic(&self) -> bool {
        self.0.deterministic()
    }

    fn check(&self, input: &PluginInput<'_>) -> Result<PluginVerdict, PluginFailure> {
        catch_unwind(AssertUnwindSafe(|| self.0.check(input)))
            .unwrap_or_else(|_| Err(PluginFailure("plugin panicked".into())))
    }
}

/// Remembers the first result per firmware digest.
pub struct Cached {
    inner: Arc<dyn ReviewPlugin>,
    results: Mutex<HashMap<[u8; 32], Result<PluginVerdict, PluginFailure>>>,
}

impl Cached {
    pub fn new(inner: Arc<dyn ReviewPlugin>) -> Self {
        Self {
            inner,
            results: Mutex::new(HashMap::new()),
        }
    }
}

impl ReviewPlugin for Cached {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn check(&self, input: &PluginInput<'_>) -> Result<PluginVerdict, PluginFailure> {
        if let Some(hit) = self.results.lock().expect("cache lock").get(input.digest) {
            return hit.clone();
        }
        let result = self.inner.check(input);
        self.results
            .lock()
            .expect("cache lock")
            .entry(*input.digest)
            .or_insert(result)
            .clone()
    }
}

/// Runs an external executable as a review check.
#[derive(Debug, Clone)]
pub struct ExecPlugin {
    pub name: String,
    pub command: PathBuf,
    pub args: Vec<String>,
    pub deterministic: bool,
    pub timeout: Duration,
}

impl ReviewPlugin for ExecPlugin {
    fn name(&self) -> &str {
        &self.name
    }

    fn deterministic(&self) -> bool {
        self.deterministic
    }

    fn check(&self, input: &PluginInput<'_>) -> Result<PluginVerdict, PluginFailure> {
        let fail = |msg: String| PluginFailure(msg);
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .env("GRIDSIGN_DIGEST", hex::encode(input.digest))
            .env("GRIDSIGN_SIZE", input.size.to_string())
            .env("GRIDSIGN_VERSION", input.version)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| fail(format!("cannot start {}: {e}", self.command.display())))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let output = std::thread::scope(|s| {
            s.spawn(|| {
                // a scanner may exit without reading everything
                let _ = stdin.write_all(input.firmware);
                drop(stdin);
            });
            let reader = s.spawn(move || {
                let mut buf = Vec::new();
                let _ = stdout.read_to_end(&mut buf);
                buf
            });

            let started = Instant::now();
            let status = loop {
                match child.try_wait() {
                    Ok(Some(status)) => break Ok(status),
                    Ok(None) if started.elapsed() >= self.timeout => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break Err(fail(format!("timed out after {:?}", self.timeout)));
                    }
                    Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                    Err(e) => break Err(fail(format!("wait failed: {e}"))),
                }
            };
            status.map(|st| (st, reader.join().unwrap_or_default()))
        });
        let (status, out) = output?;
        if !status.success() {
            return Err(fail(format!("exited with {status}")));
        }
        parse_verdict(&String::from_utf8_lossy(&out))
    }
}

fn parse_verdict(out: &str) -> Result<PluginVerdict, PluginFailure> {
    let line = out.lines().next().unwrap_or("").trim();
    let (word, detail) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let status = match word {
        "pass" => CheckStatus::Pass,
        "warn" => CheckStatus::Warn,
        "fail" => CheckStatus::Fail,
        _ => return Err(PluginFailure(format!("unrecognized plugin output {line:?}"))),
    };
    Ok(PluginVerdict {
        status,
        detail: detail.trim().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridsign_core::review::run_review;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
        }
        p
    }

    #[test]
    fn parses_verdict_lines() {
        assert_eq!(parse_verdict("pass\n").unwrap().status, CheckStatus::Pass);
        let v = parse_verdict("fail  found EICAR signature\nmore").unwrap();
        assert_eq!(v.status, CheckStatus::Fail);
        assert_eq!(v.detail, "found EICAR signature");
        assert!(parse_verdict("").is_err());
        assert!(parse_verdict("maybe").is_err());
    }

    #[cfg(unix)]
    #[test]
    fn exec_plugin_sees_inputs() {
        let dir = tempfile::tempdir().unwrap();
        script(
            dir.path(),
            "scan.sh",
            r#"n=$(wc -c | tr -d ' ')
if [ "$n" = "$GRIDSIGN_SIZE" ]; then echo "pass $GRIDSIGN_VERSION $GRIDSIGN_DIGEST"; else echo "fail size $n"; fi"#,
        );
        std::fs::write(
            dir.path().join("policy.toml"),
            "max_size_bytes = 4096\n[[plugins]]\nname = \"scan\"\ncommand = \"./scan.sh\"\n",
        )
        .unwrap();
        let policy = load_policy(&dir.path().join("policy.toml")).unwrap();
        let r = run_review(b"hello", "1.0", &policy, None);
        let c = r.check("scan").unwrap();
        assert_eq!(c.status, CheckStatus::Pass, "{}", c.detail);
        assert!(c.detail.starts_with("1.0 2cf24dba"));
        assert!(r.is_approved());
    }

    #[cfg(unix)]
    #[test]
    fn exec_plugin_failures() {
        let dir = tempfile::tempdir().unwrap();
        let crash = script(dir.path(), "crash.sh", "kill -SEGV $$");
        let garbage = script(dir.path(), "garbage.sh", "echo hello");
        let slow = script(dir.path(), "slow.sh", "sleep 5; echo pass");
        for (cmd, timeout) in [(crash, 10), (garbage, 10), (slow, 1)] {
            let p = ExecPlugin {
                name: "x".into(),
                command: cmd,
                args: vec![],
                deterministic: true,
                timeout: Duration::from_millis(timeout * 100),
            };
            let policy = ReviewPolicy::default().with_plugin(p);
            let r = run_review(&[0u8; 100_000], "1", &policy, None);
            assert_eq!(r.check("x").unwrap().status, CheckStatus::Fail);
            assert!(!r.is_approved());
        }
        let missing = ExecPlugin {
            name: "m".into(),
            command: dir.path().join("nope"),
            args: vec![],
            deterministic: true,
            timeout: Duration::from_secs(1),
        };
        let r = run_review(b"x", "1", &ReviewPolicy::default().with_plugin(missing), None);
        assert!(r.check("m").unwrap().detail.contains("cannot start"));
    }

    struct Flaky(AtomicU32);

    impl ReviewPlugin for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn deterministic(&self) -> bool {
            false
        }
        fn check(&self, _: &PluginInput<'_>) -> Result<PluginVerdict, PluginFailure> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(PluginVerdict {
                status: if n.is_multiple_of(2) { CheckStatus::Pass } else { CheckStatus::Fail },
                detail: n.to_string(),
            })
        }
    }

    struct Panicky;

    impl ReviewPlugin for Panicky {
        fn name(&self) -> &str {
            "panicky"
        }
        fn check(&self, _: &PluginInput<'_>) -> Result<PluginVerdict, PluginFailure> {
            panic!("scanner bug")
        }
    }

    #[test]
    fn nondeterministic_plugins_are_cached() {
        let mut policy = ReviewPolicy::default();
        policy.external_scanners.push(prepare(Arc::new(Flaky(AtomicU32::new(0)))));
        let a = run_review(b"same", "1", &policy, None);
        let b = run_review(b"same", "1", &policy, None);
        assert_eq!(a, b);
        let c = run_review(b"other", "1", &policy, None);
        assert_ne!(a.check("flaky"), c.check("flaky"));
    }

    #[test]
    fn panics_become_failures() {
        let mut policy = ReviewPolicy::default();
        policy.external_scanners.push(prepare(Arc::new(Panicky)));
        let r = run_review(b"x", "1", &policy, None);
        assert_eq!(r.check("panicky").unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn denylist_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("deny.txt"),
            "# known bad\n2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824\n\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("p.toml"), "denylist = \"deny.txt\"\n").unwrap();
        let policy = load_policy(&dir.path().join("p.toml")).unwrap();
        assert!(!run_review(b"hello", "1", &policy, None).is_approved());

        std::fs::write(dir.path().join("bad.txt"), "zz\n").unwrap();
        std::fs::write(dir.path().join("p2.toml"), "denylist = \"bad.txt\"\n").unwrap();
        assert!(matches!(
            load_policy(&dir.path().join("p2.toml")),
            Err(PolicyFileError::Denylist { line: 1, .. })
        ));
        std::fs::write(dir.path().join("p3.toml"), "entropy_warning_threshold = 9.0\n").unwrap();
        assert!(matches!(load_policy(&dir.path().join("p3.toml")), Err(PolicyFileError::Invalid(_))));
        std::fs::write(dir.path().join("p4.toml"), "max_size = 1\n").unwrap();
        assert!(matches!(load_policy(&dir.path().join("p4.toml")), Err(PolicyFileError::Syntax { .. })));
    }
}
