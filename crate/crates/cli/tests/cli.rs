//! End-to-end runs of the binary: exit codes, run layout and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_integrator-silt"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("INTEGRATOR_SILT_THREADS")
        .output()
        .unwrap()
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    dirs
}

#[test]
fn default_verify_succeeds_and_writes_reports() {
    let root = tempfile::tempdir().unwrap();
    let out = run(&["verify"], &config("default.toml"), root.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs = run_dirs(root.path());
    assert_eq!(dirs.len(), 1);
    assert_eq!(dirs[0].file_name().unwrap().len(), 16);
    for f in ["config.toml", "verify.csv", "verify.json"] {
        assert!(dirs[0].join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dirs[0].join("verify.json")).unwrap()).unwrap();
    let meta = &report["meta"];
    for key in ["config_hash", "grid_n", "seed", "rng_algorithm", "library_version"] {
        assert!(!meta[key].is_null(), "report lacks {key}: {report}");
    }
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "grid_n = 3\n").unwrap();
    let out = run(&["verify"], &path, dir.path());
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line"), "{msg}");
}

#[test]
fn missing_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sample"], &dir.path().join("absent.toml"), dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tampered_operator_fails_verification() {
    let root = tempfile::tempdir().unwrap();
    let out = run(&["verify"], &config("tampered.toml"), root.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL gram_lower_bound"));
}

#[test]
fn seed_override_changes_the_run_directory() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config("fwt_wiener.toml");
    assert_eq!(run(&["sample"], &cfg, root.path()).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_integrator-silt"))
        .args(["sample", "--seed-override", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(root.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(run_dirs(root.path()).len(), 2);
}

#[test]
fn thread_count_from_environment_does_not_change_output() {
    let cfg = config("fwt_wiener.toml");
    let mut bodies = Vec::new();
    for threads in ["1", "3"] {
        let root = tempfile::tempdir().unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_integrator-silt"))
            .args(["sample", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(root.path())
            .env("INTEGRATOR_SILT_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let dir = &run_dirs(root.path())[0];
        bodies.push((
            std::fs::read(dir.join("sample_paths.csv")).unwrap(),
            std::fs::read(dir.join("sample.json")).unwrap(),
        ));
    }
    assert!(bodies[0] == bodies[1]);
}

#[test]
fn zero_threads_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_integrator-silt"))
        .args(["sample", "--threads", "0", "--config"])
        .arg(config("default.toml"))
        .arg("--out")
        .arg(root.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
