//! Command line interface.
//!
//! Exit codes: 0 success or accepted, 1 rejected (verification or review),
//! 2 usage error, 3 I/O or parse error, 4 internal error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use gridsign_core::cose::{decode_message, describe_headers};
use gridsign_core::crypto::{sha256, SigningAlgorithm};
use gridsign_core::firmware::{decode_payload, package_message, FirmwarePackage};
use gridsign_core::json::encapsulate_json;
use gridsign_core::review::{run_review, ReviewPolicy, ReviewReport};
use gridsign_core::testpki::TestPki;
use gridsign_core::{cose, verify_update, VerificationReport};
use serde_json::json;

use crate::bench::{render_table, run_bench, to_jsonl, write_report, BenchConfig};
use crate::files::{self, FileError};
use crate::{config, http, policy, service, store};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Human,
    /// One JSON object per line.
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "gridsign", version, about = "Sign, verify and inspect COSE firmware update packages")]
pub struct Cli {
    #[arg(long, value_enum, default_value_t, global = true)]
    pub output_format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a throwaway PKI for testing: issuer, chain, leaf key and trust store.
    KeygenTestPki {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Certificates in the signing chain, leaf included.
        #[arg(long, default_value_t = 2)]
        chain_len: usize,
    },
    /// Package and sign a firmware image.
    Sign {
        #[arg(long)]
        firmware: PathBuf,
        #[arg(long)]
        version: String,
        #[arg(long)]
        key: PathBuf,
        /// Certificate files (DER or PEM), leaf first.
        #[arg(long, required = true, num_args = 1..)]
        chain: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "ES256")]
        alg: String,
        /// Signing time in Unix seconds; defaults to the current time.
        #[arg(long)]
        now: Option<u64>,
        /// Also write the JSON encapsulation of the same message here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Verify an update package against a trust store directory.
    Verify {
        packet: PathBuf,
        #[arg(long)]
        trust: PathBuf,
        #[arg(long)]
        now: Option<u64>,
        /// Store the firmware of an accepted package under this directory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Print headers, chain and payload summary without verifying anything.
    Inspect { packet: PathBuf },
    /// Run the pre-signing review checks on a firmware image.
    Review {
        #[arg(long)]
        firmware: PathBuf,
        #[arg(long)]
        version: String,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Last signed version of the product.
        #[arg(long)]
        history: Option<String>,
    },
    /// Compare COSE and JSON package sizes.
    Bench {
        #[arg(long)]
        payload_sweep: bool,
        #[arg(long)]
        cert_sweep: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Skip the 100 MB payload row.
        #[arg(long)]
        skip_large: bool,
        /// Write JSONL results here and the table next to it with a .txt suffix.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the signing service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    File(#[from] FileError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::File(_) | CliError::Input(_) | CliError::Io(_) => EXIT_IO,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let format = cli.output_format;
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| execute(cli, out)));
    match result {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            report_error(err, format, &e.to_string());
            e.exit_code()
        }
        Err(_) => {
            report_error(err, format, "internal error");
            EXIT_INTERNAL
        }
    }
}

fn report_error(err: &mut dyn Write, format: OutputFormat, message: &str) {
    let _ = match format {
        OutputFormat::Human => writeln!(err, "error: {message}"),
        OutputFormat::Machine => writeln!(err, "{}", json!({ "error": message })),
    };
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let fmt = cli.output_format;
    match cli.command {
        Command::KeygenTestPki { out: dir, seed, chain_len } => keygen(&dir, seed, chain_len, fmt, out),
        Command::Sign { firmware, version, key, chain, out: dest, alg, now, json } => {
            let alg = SigningAlgorithm::from_name(&alg).map_err(|e| CliError::Usage(e.to_string()))?;
            sign(&firmware, &version, &key, &chain, &dest, alg, now.unwrap_or_else(now_secs), json.as_deref(), fmt, out)
        }
        Command::Verify { packet, trust, now, store } => {
            verify(&packet, &trust, now.unwrap_or_else(now_secs), store.as_deref(), fmt, out)
        }
        Command::Inspect { packet } => inspect(&packet, fmt, out),
        Command::Review { firmware, version, policy, history } => {
            review(&firmware, &version, policy.as_deref(), history.as_deref(), fmt, out)
        }
        Command::Bench { payload_sweep, cert_sweep, seed, skip_large, out: dest } => {
            let both = !payload_sweep && !cert_sweep;
            let config = BenchConfig {
                payload_sweep: payload_sweep || both,
                cert_sweep: cert_sweep || both,
                seed,
                skip_large,
                ..BenchConfig::default()
            };
            let report = run_bench(&config);
            if let Some(dest) = dest {
                write_report(&report, &dest)?;
            }
            match fmt {
                OutputFormat::Human => out.write_all(render_table(&report).as_bytes())?,
                OutputFormat::Machine => out.write_all(to_jsonl(&report).as_bytes())?,
            }
            Ok(EXIT_OK)
        }
        Command::Serve { config } => serve(&config),
    }
}

fn keygen(dir: &Path, seed: u64, chain_len: usize, fmt: OutputFormat, out: &mut dyn Write) -> Result<i32, CliError> {
    if chain_len == 0 {
        return Err(CliError::Usage("--chain-len must be at least 1".into()));
    }
    let pki = TestPki::generate(seed, chain_len);
    std::fs::create_dir_all(dir)?;
    files::write_file(&dir.join("issuer.der"), pki.root.der())?;
    files::write_file(&dir.join("chain.pem"), files::chain_pem(&pki.chain).as_bytes())?;
    let pem = pki
        .leaf_key
        .to_pkcs8_pem()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    files::write_secret(&dir.join("leaf.key.pem"), &pem)?;
    files::write_trust_store(&dir.join("trust"), &pki.trust_store())?;
    match fmt {
        OutputFormat::Human => writeln!(
            out,
            "wrote issuer.der, chain.pem ({} certificates), leaf.key.pem and trust/ to {}",
            pki.chain.len(),
            dir.display()
        )?,
        OutputFormat::Machine => writeln!(
            out,
            "{}",
            json!({ "event": "keygen", "dir": dir, "chain_len": pki.chain.len() })
        )?,
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn sign(
    firmware: &Path,
    version: &str,
    key: &Path,
    chain: &[PathBuf],
    dest: &Path,
    alg: SigningAlgorithm,
    now: u64,
    json_out: Option<&Path>,
    fmt: OutputFormat,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let fw = files::read(firmware)?;
    let key = files::read_key(key)?;
    let chain = files::read_chain(chain)?;
    let package = FirmwarePackage::new(fw, version).map_err(|e| CliError::Usage(e.to_string()))?;
    let message = package_message(&package, &key, &chain, alg, now).map_err(|e| CliError::Input(e.to_string()))?;
    let bytes = cose::encode_message(&message).map_err(|e| CliError::Internal(e.to_string()))?;
    files::write_atomic(dest, &bytes)?;
    let json_size = match json_out {
        Some(p) => {
            let j = encapsulate_json(&message);
            files::write_atomic(p, &j)?;
            Some(j.len())
        }
        None => None,
    };
    let digest = hex::encode(package.digest());
    match fmt {
        OutputFormat::Human => {
            writeln!(out, "signed {} ({} bytes) -> {} ({} bytes)", firmware.display(), package.firmware().len(), dest.display(), bytes.len())?;
            writeln!(out, "version {version}  digest {digest}")?;
            if let Some(n) = json_size {
                writeln!(out, "json encapsulation: {n} bytes")?;
            }
        }
        OutputFormat::Machine => writeln!(
            out,
            "{}",
            json!({
                "event": "signed",
                "out": dest,
                "size": bytes.len(),
                "json_size": json_size,
                "version": version,
                "digest": digest,
                "alg": alg.name(),
            })
        )?,
    }
    Ok(EXIT_OK)
}

/// Runs the verifier exactly as a device would. The exit code is 0 only for
/// an accepted package.
pub fn verify_file(packet: &Path, trust: &Path, now: u64) -> Result<VerificationReport, FileError> {
    let bytes = files::read(packet)?;
    let trust = files::read_trust_store(trust)?;
    Ok(verify_update(&bytes, &trust, now))
}

fn verify(
    packet: &Path,
    trust: &Path,
    now: u64,
    store_dir: Option<&Path>,
    fmt: OutputFormat,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let report = verify_file(packet, trust, now)?;
    for &(step, status) in &report.steps {
        match fmt {
            OutputFormat::Human => writeln!(out, "{:<17} {}", step.name(), status.as_str())?,
            OutputFormat::Machine => writeln!(out, "{}", json!({ "step": step, "status": status }))?,
        }
    }
    let Some(update) = report.accepted() else {
        let reason = report.reason().map(|r| r.code()).unwrap_or("Unknown");
        match fmt {
            OutputFormat::Human => writeln!(out, "REJECTED {reason}")?,
            OutputFormat::Machine => writeln!(out, "{}", json!({ "outcome": "rejected", "reason": reason }))?,
        }
        return Ok(EXIT_REJECTED);
    };
    let stored = match store_dir {
        Some(d) => Some(store::store_payload(&report, d).map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?),
        None => None,
    };
    let p = &update.package;
    match fmt {
        OutputFormat::Human => {
            writeln!(out, "ACCEPTED version {} ({} bytes)", p.version(), p.firmware().len())?;
            writeln!(out, "digest {}", hex::encode(p.digest()))?;
            writeln!(out, "signer {}  anchored by {}", update.signer, report.anchored_by.as_str())?;
            if let Some(path) = &stored {
                writeln!(out, "stored {}", path.display())?;
            }
        }
        OutputFormat::Machine => writeln!(
            out,
            "{}",
            json!({
                "outcome": "accepted",
                "version": p.version(),
                "digest": hex::encode(p.digest()),
                "size": p.firmware().len(),
                "signer": update.signer,
                "anchored_by": report.anchored_by,
                "timestamp": update.timestamp,
                "stored": stored,
            })
        )?,
    }
    Ok(EXIT_OK)
}

fn inspect(packet: &Path, fmt: OutputFormat, out: &mut dyn Write) -> Result<i32, CliError> {
    let bytes = files::read(packet)?;
    let m = decode_message(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", packet.display())))?;
    let headers = describe_headers(&m);
    let chain: Vec<(String, String, usize)> = match m.unprotected.chain() {
        Some(Ok(c)) => c
            .certs()
            .iter()
            .map(|c| (c.subject().to_string(), c.issuer().to_string(), c.der().len()))
            .collect(),
        Some(Err(e)) => return Err(CliError::Input(format!("{}: x5chain: {e}", packet.display()))),
        None => Vec::new(),
    };
    let payload = decode_payload(&m.payload);
    match fmt {
        OutputFormat::Human => {
            writeln!(out, "package    {} bytes, COSE_Sign1", bytes.len())?;
            for (k, v) in &headers {
                writeln!(out, "{k:<10} {v}")?;
            }
            for (i, (subject, issuer, len)) in chain.iter().enumerate() {
                writeln!(out, "cert[{i}]    {subject} (issuer {issuer}, {len} bytes)")?;
            }
            match &payload {
                Ok(p) => writeln!(
                    out,
                    "payload    version {} firmware {} bytes digest {}",
                    p.version(),
                    p.firmware().len(),
                    hex::encode(p.digest())
                )?,
                Err(e) => writeln!(out, "payload    unreadable: {e}")?,
            }
            writeln!(out, "signature  {} bytes (not verified)", m.signature.len())?;
        }
        OutputFormat::Machine => {
            let headers: serde_json::Map<_, _> = headers.into_iter().map(|(k, v)| (k, v.into())).collect();
            let chain: Vec<_> = chain
                .iter()
                .map(|(s, i, l)| json!({ "subject": s, "issuer": i, "size": l }))
                .collect();
            let payload = match &payload {
                Ok(p) => json!({
                    "version": p.version(),
                    "size": p.firmware().len(),
                    "digest": hex::encode(p.digest()),
                }),
                Err(e) => json!({ "error": e.to_string() }),
            };
            writeln!(
                out,
                "{}",
                json!({
                    "size": bytes.len(),
                    "headers": headers,
                    "chain": chain,
                    "payload": payload,
                    "signature_len": m.signature.len(),
                    "verified": false,
                })
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn review(
    firmware: &Path,
    version: &str,
    policy_path: Option<&Path>,
    history: Option<&str>,
    fmt: OutputFormat,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let policy = match policy_path {
        Some(p) => policy::load_policy(p).map_err(|e| CliError::Input(e.to_string()))?,
        None => ReviewPolicy::default(),
    };
    let fw = files::read(firmware)?;
    let report = run_review(&fw, version, &policy, history);
    write_review(&report, &fw, fmt, out)?;
    Ok(if report.is_approved() { EXIT_OK } else { EXIT_REJECTED })
}

fn write_review(report: &ReviewReport, fw: &[u8], fmt: OutputFormat, out: &mut dyn Write) -> std::io::Result<()> {
    let verdict = if report.is_approved() { "approved" } else { "rejected" };
    match fmt {
        OutputFormat::Human => {
            for c in &report.checks {
                writeln!(out, "{:<18} {:<4} {}", c.name, c.status.as_str(), c.detail)?;
            }
            writeln!(out, "{} (digest {})", verdict.to_uppercase(), hex::encode(sha256(fw)))
        }
        OutputFormat::Machine => {
            for c in &report.checks {
                writeln!(out, "{}", json!({ "check": c.name, "status": c.status.as_str(), "detail": c.detail }))?;
            }
            writeln!(out, "{}", json!({ "verdict": verdict, "digest": hex::encode(sha256(fw)) }))
        }
    }
}

fn serve(path: &Path) -> Result<i32, CliError> {
    let loaded = config::load_config(path).map_err(|e| CliError::Input(e.to_string()))?;
    let service = service::SigningService::open(
        &loaded.data_dir,
        loaded.issuer,
        loaded.signers,
        loaded.config.max_upload_bytes,
    )?;
    let state = http::AppState {
        service,
        policy: loaded.policy,
        tokens: loaded.tokens,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(loaded.config.listen).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        http::serve(listener, state).await
    })?;
    Ok(EXIT_OK)
}

