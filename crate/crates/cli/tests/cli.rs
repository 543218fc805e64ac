use std::fs;
use std::process::{Command, Output};

fn deepcompress(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepcompress")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn gradcheck_passes() {
    let out = deepcompress(&["gradcheck", "--instances", "3", "--seed", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.lines().all(|l| l.ends_with("ok")));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    let out = deepcompress(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn missing_data_is_an_io_error_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"data": {"images": "nowhere/images.gz", "labels": "nowhere/labels.gz"}}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = deepcompress(&["pipeline", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    let report = fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"stage\": \"data\""));
}

#[test]
fn report_without_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepcompress(&["report", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(deepcompress(&["compress-everything"]).status.code(), Some(2));
}
