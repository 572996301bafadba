use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "data.source = synthetic
synth.n_samples = 400
stage1.epochs = 40
evidence.epochs = 3
seeds = 0
";

fn evifuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evifuse")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_seeds_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "data.source = synthetic\n");
    let out = evifuse(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}evidence.epoch = 3\n"));
    let out = evifuse(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("evidence.epoch"));
}

#[test]
fn synth_train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out_str = out_dir.to_str().unwrap();
    let cfg = write_config(dir.path(), SMALL);

    let out = evifuse(&["synth", "--config", &cfg, "--out-dir", out_str]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = fs::read_to_string(out_dir.join("seed_0/data.csv")).unwrap();
    assert_eq!(data.lines().count(), 401);
    assert!(out_dir.join("seed_0/truth.csv").is_file());

    let out = evifuse(&["train", "--config", &cfg, "--out-dir", out_str]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("seed_0/system.txt").is_file());

    let out = evifuse(&["evaluate", "--config", &cfg, "--out-dir", out_str]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("dataset,method,n_seeds,"));
    assert_eq!(summary.lines().count(), 6);
    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 6);

    let out = evifuse(&["report", "--out-dir", out_str]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), summary);

    // fusion over the two modality branches only, without retraining
    let out = evifuse(&["evaluate", "--config", &cfg, "--out-dir", out_str, "--fusion-set", "a,b"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let two = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(two.lines().count(), 6);
    // single-branch and concat rows do not depend on the fusion set
    assert!(two.lines().zip(report.lines()).take(4).all(|(x, y)| x == y));
    assert!(two.lines().any(|l| l.contains(",dst_fusion,")));
}

#[test]
fn evaluate_without_training_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("empty");
    let out = evifuse(&["evaluate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_csv_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let cfg = write_config(dir.path(), SMALL);
    assert!(evifuse(&["synth", "--config", &cfg, "--out-dir", gen.to_str().unwrap()]).status.success());

    let mut data = fs::read_to_string(gen.join("seed_0/data.csv")).unwrap();
    data.push_str("not,a,number\n");
    fs::write(dir.path().join("bad.csv"), data).unwrap();
    fs::copy(gen.join("seed_0/schema.txt"), dir.path().join("schema.txt")).unwrap();
    let csv_cfg = dir.path().join("csv.cfg");
    fs::write(
        &csv_cfg,
        "data.source = csv\ndata.csv = bad.csv\ndata.schema = schema.txt\nseeds = 0\nstage1.epochs = 5\nevidence.epochs = 1\n",
    )
    .unwrap();
    let out = evifuse(&[
        "train",
        "--config",
        csv_cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
