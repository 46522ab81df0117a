use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn debris(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debris"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run debris")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = debris(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn evaluate_beirut_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut pred = String::from("label\n");
    let mut truth = String::from("label\n");
    for (p, t, n) in [("plastic", "plastic", 31), ("water", "plastic", 2), ("water", "water", 53)] {
        for _ in 0..n {
            pred.push_str(p);
            pred.push('\n');
            truth.push_str(t);
            truth.push('\n');
        }
    }
    fs::write(dir.path().join("a.csv"), pred).unwrap();
    fs::write(dir.path().join("b.csv"), truth).unwrap();
    let stdout = ok(dir.path(), &["evaluate", "--pred", "a.csv", "--truth", "b.csv", "--out", "m.csv"]);
    let line = stdout.lines().find(|l| l.starts_with("Sensitivity")).unwrap();
    assert!(line.ends_with("0.939"), "{line}");
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.contains("sensitivity,0.9393939393939394"));
}

#[test]
fn evaluate_averages_sites() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["evaluate", "--confusion", "42,0,0,82", "--confusion", "31,2,0,53"]);
    assert!(stdout.contains("Class 1                 1.00      0.97      0.98     37.50"), "{stdout}");
}

#[test]
fn matrix_is_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-data", "--n-plastic", "16", "--n-water", "80", "--plastic", "p.csv", "--water", "w.csv", "--seed", "3"]);
    fs::write(d.join("cfg.json"), r#"{"trees": 20, "grid": {"svm_sigma_grid": [0.09], "svm_c_grid": [10.0], "rf_mtry_grid": [1]}}"#).unwrap();
    let run = |out: &str, jobs: &str| {
        ok(d, &["matrix", "--config", "cfg.json", "--plastic", "p.csv", "--water", "w.csv", "--seed", "7", "--jobs", jobs, "--folds", "3", "--out", out]);
        (fs::read(d.join(out)).unwrap(), fs::read(d.join(out).with_extension("table.txt")).unwrap())
    };
    let first = run("m1.csv", "1");
    assert_eq!(first, run("m2.csv", "1"));
    assert_eq!(first, run("m3.csv", "4"));
    let csv = String::from_utf8(first.0).unwrap();
    assert_eq!(csv.lines().count(), 1 + 50 * 9);
    assert!(!csv.lines().skip(1).any(|l| l.ends_with(",NA,") || !l.ends_with(',')), "a cell failed:\n{csv}");
}

#[test]
fn scene_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-scene", "--width", "24", "--height", "16", "--patch", "2,3,3,10,0.8", "--patch", "9,12,4,4,0.6,fishnet", "--out", "scene.bsqf.json", "--truth", "truth.pgm"]);
    let stdout = ok(d, &["indices", "--in", "scene.bsqf.json", "--index", "FDI", "--out", "fdi.bsqf.json"]);
    assert!(stdout.starts_with("FDI: 24x16"), "{stdout}");
    assert!(d.join("fdi.bsqf.json").exists() && d.join("fdi.bsqf.raw").exists());
    ok(d, &["stretch", "--in", "fdi.bsqf.json", "--out", "fdi_stretched.bsqf.json"]);

    ok(d, &["synth-data", "--out", "train.csv"]);
    ok(d, &["profile", "--in", "train.csv", "--out", "profile.csv"]);
    let profile = fs::read_to_string(d.join("profile.csv")).unwrap();
    assert!(profile.starts_with("category,count,B04,B06,B08,B11\n>40%,54,"), "{profile}");
    ok(d, &["train", "--in", "train.csv", "--model", "1", "--algo", "rf", "--out", "rf.json"]);
    ok(d, &["predict-scene", "--in", "scene.bsqf.json", "--classifier", "rf.json", "--out", "pred.pgm"]);
    let stdout = ok(d, &["evaluate", "--pred", "pred.pgm", "--truth", "truth.pgm"]);
    assert!(stdout.contains("TP 46 FN 0 FP 0 TN 338"), "{stdout}");
}

#[test]
fn train_and_tune_svm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-data", "--plastic", "p.csv", "--water", "w.csv"]);
    let stdout = ok(d, &["train", "--plastic", "p.csv", "--water", "w.csv", "--test-case", "2", "--algo", "svm", "--model", "4", "--out", "svm.json"]);
    assert!(stdout.starts_with("svm Model4"), "{stdout}");
    ok(d, &["tune", "--plastic", "p.csv", "--water", "w.csv", "--algo", "svm", "--sigma-grid", "0.05,0.09", "--c-grid", "2,10", "--out", "tune.json"]);
    let tuned: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tune.json")).unwrap()).unwrap();
    assert_eq!(tuned["table"].as_array().unwrap().len(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(debris(d, &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(debris(d, &["indices", "--in", "x.json"]).status.code(), Some(1));
    assert_eq!(debris(d, &["indices", "--in", "x.json", "--index", "XYZ", "--out", "y.json"]).status.code(), Some(1));
    assert_eq!(debris(d, &["indices", "--in", "missing.json", "--index", "FDI", "--out", "y.json"]).status.code(), Some(2));
    fs::write(d.join("bad.csv"), "label\nseaweed\n").unwrap();
    assert_eq!(debris(d, &["evaluate", "--pred", "bad.csv", "--truth", "bad.csv"]).status.code(), Some(2));
    assert_eq!(debris(d, &["--help"]).status.code(), Some(0));

    fs::write(
        d.join("cfg.json"),
        r#"{"svm": {"max_passes": 1, "tolerance": 1e-12, "c": 1000}, "synth": {"fraction_distribution": [0.2, 0.2, 0.2, 0.2, 0.2]}}"#,
    )
    .unwrap();
    ok(d, &["--config", "cfg.json", "synth-data", "--out", "mixed.csv"]);
    let out = debris(d, &["--config", "cfg.json", "train", "--in", "mixed.csv", "--algo", "svm", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), r#"{"n_plastic": 5, "n_water": 7, "out": "t.csv", "seed": 4}"#).unwrap();
    let stdout = ok(d, &["--config", "cfg.json", "synth-data"]);
    assert_eq!(stdout.trim(), "5 plastic and 7 water samples, seed 4");
    let stdout = ok(d, &["--config", "cfg.json", "synth-data", "--n-water", "9", "--seed", "1"]);
    assert_eq!(stdout.trim(), "5 plastic and 9 water samples, seed 1");
}
