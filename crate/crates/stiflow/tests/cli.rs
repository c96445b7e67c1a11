use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stiflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stiflow"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn small_config(dir: &Path, name: &str, extra: &str) -> String {
    let path = dir.join(name);
    std::fs::write(
        &path,
        format!("[grid]\nn = 24\n[time]\nsteps = 4\nobservations = 2\n[kernel]\ncontrol = 4\n[model]\nmax_outer_iters = 2\nf0_iters = 3\nv_iters = 1\n{extra}"),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn error_json(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("error.json")).unwrap()).unwrap()
}

#[test]
fn phantom_writes_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "small.toml", "");
    let o = stiflow(&["phantom", "--config", &cfg, "--out", "ph"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["truth_f0.f32", "truth_f0.json", "truth_f0.png", "truth_v.f32", "truth_frame_1.json"] {
        assert!(tmp.path().join("ph").join(f).exists(), "{f}");
    }
    assert!(!tmp.path().join("ph/sinogram_0.f32").exists());
}

#[test]
fn reconstruct_reads_simulated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = small_config(tmp.path(), "sim.toml", "");
    let cfg = small_config(tmp.path(), "rec.toml", "[data]\ndir = \"sim\"\n");
    assert!(stiflow(&["simulate", "--config", &sim, "--out", "sim"], tmp.path()).status.success());
    let o = stiflow(&["reconstruct", "--config", &cfg, "--out", "rec"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("rec/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["frame_errors"].as_array().unwrap().len(), 2);
    assert!(m["objective"]["value"].as_f64().unwrap() <= m["initial_objective"].as_f64().unwrap());
}

#[test]
fn zero_velocity_weight_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "small.toml", "mu2 = 0.0\n");
    let o = stiflow(&["reconstruct", "--config", &cfg, "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&tmp.path().join("out"));
    assert_eq!(e["exit_code"], 2);
    assert_eq!(e["kind"], "config");
    assert!(!tmp.path().join("out/metrics.json").exists());
}

#[test]
fn unknown_keys_and_suites_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[grid]\nn = 32\nm = 4\n").unwrap();
    let o = stiflow(&["info", "--config", "bad.toml", "--out", "o1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&tmp.path().join("o1"))["kind"], "config");

    let o = stiflow(&["verify", "--suite", "everything", "--out", "o2"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&tmp.path().join("o2"))["kind"], "unknown_suite");

    let o = stiflow(&["info", "--config", "missing.toml", "--out", "o3"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&tmp.path().join("o3"))["kind"], "io");
}

#[test]
fn verify_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stiflow(&["verify", "--suite", "radon", "--out", "v"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("PASS radon")));
    let r: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("v/report.json")).unwrap()).unwrap();
    let checks = r["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["passed"] == true && c["suite"] == "radon"));
}

#[test]
fn info_prints_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stiflow(&["info", "--seed", "42"], tmp.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 42"));
    assert!(text.lines().any(|l| l.starts_with("config sha256 ") && l.len() == "config sha256 ".len() + 64));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "small.toml", "");
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_stiflow"))
            .args(["reconstruct", "--config", &cfg, "--out", out])
            .env("STIFLOW_THREADS", threads)
            .current_dir(tmp.path())
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(tmp.path().join(out).join("metrics.json")).unwrap()
    };
    assert_eq!(run("1", "t1"), run("3", "t3"));

    let o = Command::new(env!("CARGO_BIN_EXE_stiflow"))
        .args(["info", "--out", "bad"])
        .env("STIFLOW_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
