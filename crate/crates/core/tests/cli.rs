//! End-to-end checks of the command-line interface and its output files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use v2vsim::trace::{read_app_trace, read_phy_trace};

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_v2vsim")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn missing_config_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let status = Command::new(exe())
        .args(["run", "no-such-file.toml", "--out"])
        .arg(&out_dir)
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(!status.success());
    assert!(!out_dir.exists(), "no partial outputs on failure");
}

#[test]
fn invalid_override_fails_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let output = Command::new(exe())
        .args(["run"])
        .arg(configs_dir().join("example-one.toml"))
        .args(["--set", "phy.numerology=5", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("numerology"), "stderr was: {stderr}");
    assert!(!out_dir.exists());
}

#[test]
fn run_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let status = Command::new(exe())
        .args(["run"])
        .arg(configs_dir().join("example-one.toml"))
        .args(["--duration", "200ms", "--seed", "9", "--out"])
        .arg(&out_dir)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    for file in [
        "phy_trace.csv",
        "app_trace.csv",
        "summary.txt",
        "effective_config.toml",
    ] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    let effective = std::fs::read_to_string(out_dir.join("effective_config.toml")).unwrap();
    assert!(effective.contains("seed = 9"));
    assert!(effective.contains("duration = \"200ms\""));
    assert!(effective.contains("rlc_capacity = 500"));

    // One row per received transport block, delivered or corrupt.
    let phy = read_phy_trace(&out_dir.join("phy_trace.csv")).unwrap();
    assert!(!phy.is_empty());
    let mut last = 0;
    for r in &phy {
        assert!(r.time.as_ns() >= last, "times must be non-decreasing");
        last = r.time.as_ns();
    }
}

#[test]
fn fixed_mcs_override_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let status = Command::new(exe())
        .args(["run"])
        .arg(configs_dir().join("example-one.toml"))
        .args(["--duration", "100ms", "--set", "mac.fixed_mcs=14", "--out"])
        .arg(&out_dir)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let phy = read_phy_trace(&out_dir.join("phy_trace.csv")).unwrap();
    assert!(!phy.is_empty());
    assert!(phy.iter().all(|r| r.mcs == 14));
}

/// The summary must be recomputable from the two trace files alone.
#[test]
fn summary_matches_trace_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let status = Command::new(exe())
        .args(["run"])
        .arg(configs_dir().join("example-one.toml"))
        .args(["--duration", "500ms", "--out"])
        .arg(&out_dir)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());

    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    let duration_ns: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("duration_ns = "))
        .unwrap()
        .parse()
        .unwrap();
    let app = read_app_trace(&out_dir.join("app_trace.csv")).unwrap();
    let phy = read_phy_trace(&out_dir.join("phy_trace.csv")).unwrap();

    // Recompute per-flow stats from the app trace.
    #[derive(Default)]
    struct Flow {
        sent: u64,
        delivered: u64,
        bytes: u64,
        latency_ns: u64,
    }
    let mut flows: BTreeMap<(u32, u32), Flow> = BTreeMap::new();
    for r in &app {
        let f = flows.entry((r.tx_rnti, r.rx_rnti)).or_default();
        f.sent += 1;
        if let Some(rx) = r.rx_time {
            f.delivered += 1;
            f.bytes += r.bytes as u64;
            f.latency_ns += rx.as_ns() - r.tx_time.as_ns();
        }
    }

    // Walk the summary blocks and compare every value.
    let mut block: Option<(u32, u32)> = None;
    let mut is_link = false;
    let mut compared_flows = 0;
    let mut compared_links = 0;
    for line in summary.lines() {
        if let Some(rest) = line.strip_prefix("[flow tx=") {
            let (tx, rx) = parse_pair(rest);
            block = Some((tx, rx));
            is_link = false;
        } else if let Some(rest) = line.strip_prefix("[link tx=") {
            let (tx, rx) = parse_pair(rest);
            block = Some((tx, rx));
            is_link = true;
        } else if let (Some(key), Some((name, value))) = (block, line.split_once(" = ")) {
            if is_link {
                let records: Vec<_> = phy
                    .iter()
                    .filter(|r| (r.tx_rnti, r.rx_rnti) == key)
                    .collect();
                match name {
                    "records" => {
                        compared_links += 1;
                        assert_eq!(value, records.len().to_string(), "link {key:?}");
                    }
                    "corrupt" => {
                        let corrupt = records.iter().filter(|r| r.corrupt).count();
                        assert_eq!(value, corrupt.to_string(), "link {key:?}");
                    }
                    "mean_sinr_db" => {
                        let mean: f64 = records.iter().map(|r| r.sinr_db).sum::<f64>()
                            / records.len() as f64;
                        let got: f64 = value.parse().unwrap();
                        // trace values carry two decimals
                        assert!((mean - got).abs() < 0.01, "link {key:?}: {mean} vs {got}");
                    }
                    "mean_mcs" => {
                        let mean: f64 = records.iter().map(|r| f64::from(r.mcs)).sum::<f64>()
                            / records.len() as f64;
                        let got: f64 = value.parse().unwrap();
                        assert!((mean - got).abs() < 0.005, "link {key:?}");
                    }
                    _ => {}
                }
            } else {
                let f = &flows[&key];
                match name {
                    "sent" => {
                        compared_flows += 1;
                        assert_eq!(value, f.sent.to_string(), "flow {key:?}");
                    }
                    "delivered" => assert_eq!(value, f.delivered.to_string(), "flow {key:?}"),
                    "delivered_bytes" => assert_eq!(value, f.bytes.to_string(), "flow {key:?}"),
                    "throughput_mbps" => {
                        let expected = f.bytes as f64 * 8.0 / (duration_ns / 1e9) / 1e6;
                        assert_eq!(value, format!("{expected:.3}"), "flow {key:?}");
                    }
                    "mean_latency_ms" => {
                        let expected = if f.delivered > 0 {
                            format!("{:.3}", f.latency_ns as f64 / f.delivered as f64 / 1e6)
                        } else {
                            "n/a".to_owned()
                        };
                        assert_eq!(value, expected, "flow {key:?}");
                    }
                    _ => {}
                }
            }
        }
    }
    assert!(compared_flows >= 2, "echo scenario has two flows");
    assert!(compared_links >= 2);
}

fn parse_pair(rest: &str) -> (u32, u32) {
    let rest = rest.trim_end_matches(']');
    let (tx, rx) = rest.split_once(" rx=").unwrap();
    (tx.parse().unwrap(), rx.parse().unwrap())
}

/// Every shipped example must finish a full 2 s simulation well inside the
/// interactive budget.
#[test]
fn shipped_examples_run_within_budget() {
    for name in ["example-one", "example-two", "example-three", "example-four"] {
        let tmp = tempfile::tempdir().unwrap();
        let started = Instant::now();
        let status = Command::new(exe())
            .args(["run"])
            .arg(configs_dir().join(format!("{name}.toml")))
            .args(["--out"])
            .arg(tmp.path().join("out"))
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        let elapsed = started.elapsed();
        assert!(status.success(), "{name} failed");
        assert!(
            elapsed.as_secs_f64() < 60.0,
            "{name} took {elapsed:?} for 2 s simulated"
        );
    }
}

#[test]
fn sweep_runs_cartesian_product() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sweep");
    let status = Command::new(exe())
        .args(["sweep"])
        .arg(configs_dir().join("example-one.toml"))
        .args([
            "--param",
            "phy.bandwidth_hz=100e6,400e6",
            "--seeds",
            "2",
            "--duration",
            "100ms",
            "--out",
        ])
        .arg(&out_dir)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let index = std::fs::read_to_string(out_dir.join("sweep_index.csv")).unwrap();
    assert_eq!(index.lines().count(), 1 + 4, "2 values x 2 seeds");
    assert!(index.contains("ok"));
    assert!(!index.contains("failed"));
    for label in ["phy.bandwidth_hz=100e6", "phy.bandwidth_hz=400e6"] {
        for seed in [1, 2] {
            let dir = out_dir.join(label).join(format!("seed{seed}"));
            assert!(dir.join("summary.txt").exists(), "{}", dir.display());
        }
    }
}

#[test]
fn env_var_sets_default_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("from-env");
    let status = Command::new(exe())
        .args(["run"])
        .arg(configs_dir().join("example-one.toml"))
        .args(["--duration", "50ms"])
        .env("V2VSIM_OUT", &out_dir)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("phy_trace.csv").exists());
}
