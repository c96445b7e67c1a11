//! Everything the runs write can be loaded back, and loading then writing
//! again reproduces the bytes.

use std::path::{Path, PathBuf};

use stiflow::experiment::{run_phantom, run_reconstruct, run_simulate, Metrics};
use stiflow::io::{self, Header, PngNormalization};
use stiflow::verify::{run_suite, Report, Suite};
use stiflow::ExperimentConfig;

fn config() -> ExperimentConfig {
    ExperimentConfig::from_toml(
        "[grid]\nn = 24\n[time]\nsteps = 4\nobservations = 2\n[kernel]\ncontrol = 4\n\
         [noise]\nsigma = 0.02\n[model]\nmax_outer_iters = 2\nf0_iters = 3\nv_iters = 1\n",
    )
    .unwrap()
}

fn stem(path: &Path) -> PathBuf {
    path.with_extension("")
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

/// Loads every file in `dir` with the matching reader and returns how many
/// were checked.
fn check_dir(dir: &Path, scratch: &Path) -> usize {
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let again = scratch.join(&name);
        if name.ends_with(".png.json") {
            let norm: PngNormalization = io::read_json(&path).unwrap();
            assert!(norm.min <= norm.max, "{name}");
        } else if name.ends_with(".png") {
            let img = io::read_png(&path).unwrap();
            let exact = io::read_field(&stem(&path)).unwrap();
            let norm: PngNormalization = io::read_json(&dir.join(format!("{name}.json"))).unwrap();
            let quantum = (norm.max - norm.min) / 255.0;
            let err = img.sub(&exact).unwrap().linf_norm();
            assert!(err <= 0.5 * quantum + 1e-6, "{name}: {err} vs {quantum}");
        } else if name == "metrics.json" {
            let m: Metrics = io::read_json(&path).unwrap();
            io::write_json(&again, &m).unwrap();
            assert!(same_bytes(&path, &again));
        } else if name == "report.json" {
            let r: Report = io::read_json(&path).unwrap();
            io::write_json(&again, &r).unwrap();
            assert!(same_bytes(&path, &again));
        } else if name == "log.csv" {
            let rows = io::read_log(&path).unwrap();
            assert_eq!(rows[0].status, "init");
            assert!(rows.iter().enumerate().all(|(k, r)| r.iter == k));
        } else if name.ends_with(".json") {
            let s = stem(&path);
            let s_again = stem(&again);
            match io::read_json::<Header>(&path).unwrap() {
                Header::ScalarField { .. } => io::write_field(&s_again, &io::read_field(&s).unwrap()).unwrap(),
                Header::VelocityField { .. } => {
                    io::write_velocity(&s_again, &io::read_velocity(&s).unwrap()).unwrap()
                }
                Header::Sinogram { .. } => io::write_sinogram(&s_again, &io::read_sinogram(&s).unwrap()).unwrap(),
            }
            assert!(same_bytes(&path, &again), "{name}");
            assert!(same_bytes(&s.with_extension("f32"), &s_again.with_extension("f32")), "{name}");
        } else {
            // array payloads are checked with their headers
            assert!(name.ends_with(".f32"), "unexpected file {name}");
            assert!(path.with_extension("json").exists(), "{name} has no header");
        }
        n += 1;
    }
    n
}

#[test]
fn every_artifact_reads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let scratch = root.join("scratch");
    std::fs::create_dir_all(&scratch).unwrap();

    let mut cfg = config();
    run_phantom(&cfg, &root.join("phantom")).unwrap();
    run_simulate(&cfg, &root.join("sim")).unwrap();
    cfg.data.dir = Some(root.join("sim"));
    let m = run_reconstruct(&cfg, &root.join("rec")).unwrap();
    let report = run_suite(Suite::Radon).unwrap();
    io::write_json(&root.join("verify/report.json"), &report).unwrap();

    assert!(check_dir(&root.join("phantom"), &scratch) >= 4 * 3 + 2);
    assert!(check_dir(&root.join("sim"), &scratch) >= 4 * 3 + 2 + 2 * 2);
    assert!(check_dir(&root.join("rec"), &scratch) >= 4 * 3 + 2 + 2);
    assert_eq!(check_dir(&root.join("verify"), &scratch), 1);

    let log = io::read_log(&root.join("rec/log.csv")).unwrap();
    assert_eq!(log.len(), m.iterations + 1);
    let last = log.last().unwrap();
    assert_eq!(last.status, m.status);
    assert_eq!(last.values[0], m.objective.value);
}

#[test]
fn stored_data_reconstructs_like_in_memory_data() {
    // the sinograms are stored as f32, so the two runs agree to that
    // precision rather than bitwise
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.noise.sigma = 0.0;
    run_simulate(&cfg, &tmp.path().join("sim")).unwrap();
    let direct = run_reconstruct(&cfg, &tmp.path().join("a")).unwrap();
    cfg.data.dir = Some(tmp.path().join("sim"));
    let stored = run_reconstruct(&cfg, &tmp.path().join("b")).unwrap();
    let (x, y) = (direct.objective.value, stored.objective.value);
    assert!((x - y).abs() <= 1e-5 * x, "{x} vs {y}");
    for (a, b) in direct.frame_errors.unwrap().iter().zip(stored.frame_errors.unwrap()) {
        assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
    }
}
