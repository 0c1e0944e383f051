//! End-to-end checks of the `srv-sim` binary: exit codes, artifact layout,
//! version headers, and byte-identical reruns.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_srv-sim"))
}

fn scenario_dir() -> String {
    format!("{}/scenarios", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn list_scenarios_names_the_builtins() {
    let out = bin().arg("list-scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["srv_leak", "spectre_stl", "spectre_v1", "evict_time", "replay_amplification"] {
        assert!(text.contains(name), "missing {name} in: {text}");
    }
}

#[test]
fn missing_scenario_file_exits_2() {
    let out = bin().args(["run", "no_such_scenario.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn malformed_mitigation_exits_2_listing_valid_names() {
    let out = bin()
        .args(["run", "srv_leak", "--mitigation", "pixie_dust"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pixie_dust"));
    assert!(err.contains("vfence") && err.contains("mem_fence"), "{err}");
}

#[test]
fn run_from_scenario_file_emits_versioned_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let toml = format!("{}/spectre_v1.toml", scenario_dir());
    let out = bin()
        .args(["run", &toml, "--out"])
        .arg(tmp.path())
        .args(["--emit", "report,csv,trace,mld"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for (file, header) in [
        ("report.txt", "report_v1"),
        ("results.csv", "leak_v1"),
        ("trace.log", "trace_v1"),
        ("mld.log", "mld_v1"),
    ] {
        let path = tmp.path().join(file);
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("{file} missing"));
        assert!(
            text.starts_with(header),
            "{file} must start with its version header, got: {}",
            text.lines().next().unwrap_or("")
        );
    }
    let report = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("accuracy: 1.0000"), "{report}");
}

#[test]
fn identical_config_and_seed_give_identical_artifacts() {
    let run = |dir: &Path| {
        let toml = format!("{}/spectre_v1.toml", scenario_dir());
        let out = bin()
            .args(["run", &toml, "--seed", "7", "--jitter", "10", "--out"])
            .arg(dir)
            .args(["--emit", "report,csv,trace,mld"])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    for file in ["report.txt", "results.csv", "trace.log", "mld.log"] {
        let left = std::fs::read(a.path().join(file)).unwrap();
        let right = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

#[test]
fn env_var_supplies_the_default_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "spectre_v1", "--out"])
        .arg(tmp.path())
        .env("SRV_SIM_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("seed: 9"), "{report}");
}

#[test]
fn sweep_writes_csv_and_prints_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    // Small grid around a small LLC so the test stays quick.
    let out = bin()
        .args([
            "sweep",
            "--llc",
            "1048576",
            "--sizes",
            "65536,131072,262144,524288,1048576,2097152,4194304",
            "--out",
        ])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("estimated LLC size: 1048576 bytes"), "{text}");
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("sweep_v1\nsize_bytes,mean_ticks,samples\n"));
    assert_eq!(csv.lines().count(), 2 + 7);
}

#[test]
fn empty_sweep_size_list_exits_2() {
    let out = bin().args(["sweep", "--sizes", ""]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn matrix_single_cell_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "matrix",
            "--scenarios",
            "spectre_v1",
            "--mitigations",
            "mem_fence",
            "--out",
        ])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("matrix.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("matrix_v1"));
    assert_eq!(lines.next(), Some("scenario,mem_fence"));
    assert_eq!(lines.next(), Some("spectre_v1,0.0000"));
}
