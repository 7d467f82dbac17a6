//! COSE versus JSON size benchmark.
//!
//! Both encapsulations carry the same payload bytes, certificates and
//! signature; only the container differs. Firmware content is seeded random
//! data, so sizes are reproducible.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::time::Instant;

use gridsign_core::crypto::SigningAlgorithm;
use gridsign_core::firmware::{package_message, FirmwarePackage};
use gridsign_core::json::encapsulate_json;
use gridsign_core::testpki::TestPki;
use gridsign_core::{cose, verify_update};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

pub const KB: u64 = 1024;
pub const MB: u64 = 1024 * 1024;
pub const DEFAULT_PAYLOAD_SIZES: [u64; 5] = [1, KB, 100 * KB, MB, 100 * MB];
pub const DEFAULT_CERT_COUNTS: [usize; 3] = [1, 2, 3];
/// 2024-06-01T00:00:00Z, inside the test PKI validity window.
pub const BENCH_TIMESTAMP: u64 = 1_717_200_000;
const BENCH_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeComparison {
    pub payload_size: u64,
    pub cert_count: usize,
    pub cose_size: u64,
    pub json_size: u64,
    /// `cose_size / json_size`, unrounded.
    pub ratio: f64,
}

#[derive(Debug)]
pub struct Measured {
    pub sizes: SizeComparison,
    pub sign_secs: f64,
    pub verify_secs: f64,
    pub cert_sizes: Vec<usize>,
}

pub fn firmware(size: u64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fw = vec![0u8; size as usize];
    rng.fill_bytes(&mut fw);
    fw
}

/// Builds both encapsulations over identical content and compares sizes.
pub fn size_compare(payload_size: u64, cert_count: usize, alg: SigningAlgorithm, seed: u64) -> SizeComparison {
    measure(payload_size, cert_count, alg, seed).sizes
}

pub fn measure(payload_size: u64, cert_count: usize, alg: SigningAlgorithm, seed: u64) -> Measured {
    let pki = TestPki::generate(seed, cert_count);
    let package = FirmwarePackage::new(firmware(payload_size, seed), BENCH_VERSION)
        .expect("non-empty version");

    let started = Instant::now();
    let message = package_message(&package, &pki.leaf_key, &pki.chain, alg, BENCH_TIMESTAMP)
        .expect("test PKI matches");
    let packet = cose::encode_message(&message).expect("encodable");
    let sign_secs = started.elapsed().as_secs_f64();
    drop(package);

    let started = Instant::now();
    let report = verify_update(&packet, &pki.trust_store(), BENCH_TIMESTAMP);
    let verify_secs = started.elapsed().as_secs_f64();
    assert!(report.is_accepted(), "benchmark package failed verification");
    drop(report);

    let json = encapsulate_json(&message);
    let cose_size = packet.len() as u64;
    let json_size = json.len() as u64;
    Measured {
        sizes: SizeComparison {
            payload_size,
            cert_count,
            cose_size,
            json_size,
            ratio: cose_size as f64 / json_size as f64,
        },
        sign_secs,
        verify_secs,
        cert_sizes: pki.chain.certs().iter().map(|c| c.der().len()).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub payload_sizes: Vec<u64>,
    /// Chain length used for the payload sweep.
    pub payload_sweep_certs: usize,
    pub cert_counts: Vec<usize>,
    pub alg: SigningAlgorithm,
    pub seed: u64,
    pub payload_sweep: bool,
    pub cert_sweep: bool,
    /// Skip payload rows of at least `large_threshold` bytes.
    pub skip_large: bool,
    pub large_threshold: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            payload_sizes: DEFAULT_PAYLOAD_SIZES.to_vec(),
            payload_sweep_certs: 2,
            cert_counts: DEFAULT_CERT_COUNTS.to_vec(),
            alg: SigningAlgorithm::EcdsaP256Sha256,
            seed: 1,
            payload_sweep: true,
            cert_sweep: true,
            skip_large: false,
            large_threshold: 100 * MB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Payload,
    Cert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sweep: Sweep,
    pub payload_size: u64,
    pub cert_count: usize,
    pub skipped: bool,
    pub cose_size: Option<u64>,
    pub json_size: Option<u64>,
    /// Rounded to three decimals.
    pub ratio: Option<f64>,
    pub sign_ms: Option<f64>,
    pub verify_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEnvironment {
    pub seed: u64,
    pub alg: String,
    /// DER sizes of the chain certificates, leaf first, per chain length.
    pub cert_sizes: Vec<Vec<usize>>,
    pub skip_large: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: BenchEnvironment,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn rows(&self, sweep: Sweep) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.sweep == sweep)
    }
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub fn run_bench(config: &BenchConfig) -> BenchReport {
    let mut rows = Vec::new();
    let mut cert_sizes: Vec<Vec<usize>> = Vec::new();
    let mut note_certs = |sizes: Vec<usize>| {
        if !cert_sizes.contains(&sizes) {
            cert_sizes.push(sizes);
        }
    };

    let run = |sweep, payload_size, cert_count| {
        if sweep == Sweep::Payload && config.skip_large && payload_size >= config.large_threshold {
            return (
                BenchRow {
                    sweep,
                    payload_size,
                    cert_count,
                    skipped: true,
                    cose_size: None,
                    json_size: None,
                    ratio: None,
                    sign_ms: None,
                    verify_ms: None,
                },
                None,
            );
        }
        let m = measure(payload_size, cert_count, config.alg, config.seed);
        (
            BenchRow {
                sweep,
                payload_size,
                cert_count,
                skipped: false,
                cose_size: Some(m.sizes.cose_size),
                json_size: Some(m.sizes.json_size),
                ratio: Some(round3(m.sizes.ratio)),
                sign_ms: Some(round3(m.sign_secs * 1e3)),
                verify_ms: Some(round3(m.verify_secs * 1e3)),
            },
            Some(m.cert_sizes),
        )
    };

    if config.payload_sweep {
        for &size in &config.payload_sizes {
            let (row, certs) = run(Sweep::Payload, size, config.payload_sweep_certs);
            rows.push(row);
            if let Some(c) = certs {
                note_certs(c);
            }
        }
    }
    if config.cert_sweep {
        for &count in &config.cert_counts {
            let (row, certs) = run(Sweep::Cert, 0, count);
            rows.push(row);
            if let Some(c) = certs {
                note_certs(c);
            }
        }
    }

    BenchReport {
        environment: BenchEnvironment {
            seed: config.seed,
            alg: config.alg.name().to_string(),
            cert_sizes,
            skip_large: config.skip_large,
        },
        rows,
    }
}

/// One JSON object per line: the environment record, then each row.
pub fn to_jsonl(report: &BenchReport) -> String {
    let mut out = String::new();
    let env = serde_json::json!({ "environment": report.environment });
    out.push_str(&env.to_string());
    out.push('\n');
    for row in &report.rows {
        out.push_str(&serde_json::to_string(row).expect("plain struct"));
        out.push('\n');
    }
    out
}

/// Sizes as the tables print them: bytes below 10 KiB, KiB below 10 MiB,
/// then MiB.
pub fn human_size(n: u64) -> String {
    if n < 10 * KB {
        format!("{n} {}", if n == 1 { "Byte" } else { "Bytes" })
    } else if n < 10 * MB {
        format!("{} KB", (n as f64 / KB as f64).round() as u64)
    } else {
        format!("{} MB", (n as f64 / MB as f64).round() as u64)
    }
}

/// Exact label for a configured input size (`1 KB`, `1 MB`).
pub fn input_label(n: u64) -> String {
    if n >= MB && n.is_multiple_of(MB) {
        format!("{} MB", n / MB)
    } else if n >= KB && n.is_multiple_of(KB) {
        format!("{} KB", n / KB)
    } else {
        human_size(n)
    }
}

pub fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let mut section = |title: &str, first_col: &str, sweep: Sweep| {
        let rows: Vec<_> = report.rows(sweep).collect();
        if rows.is_empty() {
            return;
        }
        let _ = writeln!(out, "{title}");
        let _ = writeln!(
            out,
            "{first_col:<14} {:>18} {:>18} {:>14} {:>10} {:>10}",
            "COSE size", "JSON size", "Reduced ratio", "sign ms", "verify ms"
        );
        for r in rows {
            let label = match sweep {
                Sweep::Payload => input_label(r.payload_size),
                Sweep::Cert => r.cert_count.to_string(),
            };
            if r.skipped {
                let _ = writeln!(out, "{label:<14} {:>18}", "skipped");
                continue;
            }
            let _ = writeln!(
                out,
                "{label:<14} {:>18} {:>18} {:>14.3} {:>10.1} {:>10.1}",
                human_size(r.cose_size.unwrap_or(0)),
                human_size(r.json_size.unwrap_or(0)),
                r.ratio.unwrap_or(f64::NAN),
                r.sign_ms.unwrap_or(0.0),
                r.verify_ms.unwrap_or(0.0),
            );
        }
        out.push('\n');
    };
    section(
        &format!("Payload sweep ({} certificates)", report_certs(report, Sweep::Payload)),
        "Payload size",
        Sweep::Payload,
    );
    section("Certificate sweep (empty payload)", "Cert count", Sweep::Cert);
    let _ = writeln!(
        out,
        "seed {}, {}, certificate DER sizes {:?}",
        report.environment.seed, report.environment.alg, report.environment.cert_sizes
    );
    out
}

fn report_certs(report: &BenchReport, sweep: Sweep) -> usize {
    report.rows(sweep).next().map_or(0, |r| r.cert_count)
}

/// Writes `<out>` (JSON lines) and `<out>.txt` (table).
pub fn write_report(report: &BenchReport, out: &Path) -> io::Result<()> {
    std::fs::write(out, to_jsonl(report))?;
    let mut table = out.as_os_str().to_owned();
    table.push(".txt");
    std::fs::write(table, render_table(report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_sizes() {
        let a = size_compare(1000, 2, SigningAlgorithm::EcdsaP256Sha256, 4);
        let b = size_compare(1000, 2, SigningAlgorithm::EcdsaP256Sha256, 4);
        assert_eq!(a, b);
        assert_eq!(firmware(10, 1), firmware(10, 1));
        assert_ne!(firmware(10, 1), firmware(10, 2));
    }

    #[test]
    fn json_never_smaller_than_base64_of_payload() {
        for size in [0, 1, 2, 3, 1000, 4096] {
            let s = size_compare(size, 1, SigningAlgorithm::EcdsaP256Sha256, 1);
            assert!(s.json_size >= 4 * size.div_ceil(3));
            assert!(s.cose_size > size);
        }
    }

    #[test]
    fn human_sizes() {
        assert_eq!(human_size(1), "1 Byte");
        assert_eq!(human_size(1038), "1038 Bytes");
        assert_eq!(human_size(103_500), "101 KB");
        assert_eq!(human_size(1_049_600), "1025 KB");
        assert_eq!(human_size(100 * MB + 5000), "100 MB");
        assert_eq!(input_label(100 * KB), "100 KB");
        assert_eq!(input_label(1), "1 Byte");
    }

    #[test]
    fn skipped_rows_are_recorded() {
        let config = BenchConfig {
            payload_sizes: vec![1, 100 * MB],
            cert_sweep: false,
            skip_large: true,
            ..BenchConfig::default()
        };
        let r = run_bench(&config);
        assert_eq!(r.rows.len(), 2);
        assert!(!r.rows[0].skipped);
        assert!(r.rows[1].skipped);
        assert!(r.environment.skip_large);
        let jsonl = to_jsonl(&r);
        assert_eq!(jsonl.lines().count(), 3);
        assert!(render_table(&r).contains("skipped"));
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = BenchConfig {
            payload_sizes: vec![1, KB],
            cert_counts: vec![1],
            ..BenchConfig::default()
        };
        let r = run_bench(&config);
        let out = dir.path().join("bench.jsonl");
        write_report(&r, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let untimed = |mut row: BenchRow| {
            row.sign_ms = None;
            row.verify_ms = None;
            row
        };
        let rows: Vec<BenchRow> = text
            .lines()
            .skip(1)
            .map(|l| untimed(serde_json::from_str(l).unwrap()))
            .collect();
        assert_eq!(rows, r.rows.iter().cloned().map(untimed).collect::<Vec<_>>());
        let table = std::fs::read_to_string(dir.path().join("bench.jsonl.txt")).unwrap();
        assert!(table.contains("Reduced ratio"));
    }
}
