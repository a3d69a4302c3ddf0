//! Exit-code and interface contract of the command-line tool.

use std::process::Command;

fn voseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voseg"))
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = voseg().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_required_flag_exits_one() {
    let out = voseg().arg("train").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_thread_count_exits_one() {
    let out = voseg().args(["--threads", "0", "bench-matching"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_with_unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"steps": 1, "bogus": true}}"#).unwrap();
    let out = voseg()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(dir.path())
        .arg("--out")
        .arg(dir.path().join("m.ckpt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus"), "stderr: {err}");
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"garbagegarbagegarbage").unwrap();
    let out = voseg()
        .args(["infer", "--ckpt"])
        .arg(&ckpt)
        .arg("--seq")
        .arg(dir.path())
        .arg("--first-mask")
        .arg(dir.path().join("m.png"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_dir_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"steps": 1, "crop": 16}}"#).unwrap();
    let out = voseg()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(dir.path().join("nope"))
        .arg("--out")
        .arg(dir.path().join("m.ckpt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2)); // io error: directory missing
}

#[test]
fn bench_prints_json_report() {
    let out = voseg()
        .args(["bench-matching", "--height", "16", "--width", "16", "--dim", "4", "--window", "2", "--trials", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout should be a JSON report");
    assert_eq!(v["global_candidates"], 256);
    assert_eq!(v["local_candidates_max"], 25);
}

#[test]
fn gradcheck_small_grid_exits_zero() {
    let out = voseg().args(["gradcheck", "--size", "8"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stdout: {stdout}");
    assert!(stdout.contains("max relative error"));
}

#[test]
fn gradcheck_rejects_bad_size() {
    let out = voseg().args(["gradcheck", "--size", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
