use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ppthin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppthin")).args(args).current_dir(cwd).env("PPTHIN_THREADS", "2").output().expect("binary runs")
}

#[test]
fn canned_experiment_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppthin(&["--replicates", "10000", "--out", "run", "experiment", "--canned", "matern-poisson"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "plot.csv", "point-000/bound.json", "point-000/certificates.json", "point-000/distances.csv"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let plot = fs::read_to_string(dir.path().join("run/plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 3);
    assert!(plot.contains(",tv,") && plot.contains(",d2,") && plot.contains("PASS"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = ppthin(&["--seed", "9", "--replicates", "10000", "--out", name, "experiment", "--canned", "boolean-poisson"], dir.path());
        assert!(out.status.success());
    }
    for f in ["manifest.json", "point-000/certificates.json", "point-000/bound.json", "point-000/distances.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_config_is_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
experiment = "boolean-poisson"
replicates = 10000
r_bar = 0.05

[ground]
kind = "poisson"
intensity = -2.0

[retention]
kind = "independent_boolean_cover"
q = 1.0

[retention.model]
intensity = 5.0
norm = "euclidean"

[retention.model.radius]
kind = "deterministic"
radius = 0.05
"#;
    fs::write(dir.path().join("bad.toml"), cfg).unwrap();
    let out = ppthin(&["experiment", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("r_bar") && err.contains("ground.intensity"), "{err}");
}

#[test]
fn certify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ppthin(&["--out", "b", "bound", "--canned", "matern-poisson"], dir.path()).status.success());
    // Every replicate retains exactly one point: far from Poisson.
    fs::write(dir.path().join("counts.txt"), "1\n".repeat(10_000)).unwrap();
    let out = ppthin(&["certify", "--bound", "b/bound-000.json", "--counts", "counts.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"verdict\": \"FAIL\""));
    let out = ppthin(&["certify", "--bound", "b/bound-000.json", "--counts", "counts.txt", "--config-hash", "other"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_thin_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = ppthin(args, dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["--seed", "4", "--replicates", "20", "--out", "sim", "simulate", "poisson", "--intensity", "40", "--halo", "0.1"]);
    assert_eq!(fs::read_dir(dir.path().join("sim")).unwrap().count(), 20);
    run(&["--out", "thin.csv", "thin", "sim/pattern-00000.csv", "--field", "matern", "--r", "0.05", "--halo", "0.1"]);
    let thinned = fs::read_to_string(dir.path().join("thin.csv")).unwrap();
    assert!(thinned.starts_with("x1,x2,retained"));
    run(&["--out", "g.csv", "summaries", "sim", "--stat", "g", "--r", "0.02,0.05,0.1", "--halo", "0.1"]);
    let g = fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert_eq!(g.lines().count(), 4);
    run(&["--replicates", "10", "--out", "strauss", "simulate", "strauss", "--intensity", "30", "--gamma", "0.3", "--range", "0.05"]);
}
