mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn toxipipe(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toxipipe")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn run_then_export_succeeds() {
    let dir = common::demo_dir();
    let o = toxipipe(&["run", "--config", "config.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = toxipipe(&["export", "--config", "config.json", "--format", "csv"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv, fs::read_to_string(dir.path().join("work/stats.csv")).unwrap());
}

#[test]
fn config_problems_exit_with_2() {
    let dir = common::demo_dir();
    assert_eq!(code(&toxipipe(&["run", "--config", "missing.json"], dir.path())), 2);
    fs::write(dir.path().join("bad.json"), r#"{"schema_version": 1, "surprise": true}"#).unwrap();
    assert_eq!(code(&toxipipe(&["run", "--config", "bad.json"], dir.path())), 2);
    fs::remove_file(dir.path().join("seeds.txt")).unwrap();
    let o = toxipipe(&["run", "--config", "config.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds.txt"));
}

#[test]
fn stage_failure_exits_with_3() {
    let dir = common::demo_dir();
    fs::write(dir.path().join("train.jsonl"), "{\"text\":\"xanax\",\"label\":\"mention\"}\n").unwrap();
    let o = toxipipe(&["run", "--config", "config.json"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train"));
    assert!(dir.path().join("work/manifest.json").is_file());
}

#[test]
fn other_failures_exit_with_1() {
    let dir = common::demo_dir();
    let o = toxipipe(&["export", "--config", "config.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no completed run"));
}

#[test]
fn synth_regenerates_the_bundled_fixtures() {
    let out = tempfile::tempdir().unwrap();
    let o = toxipipe(&["synth", "demo", "--out", "demo"], out.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = toxipipe(&["synth", "classify", "--out", "classify"], out.path());
    assert_eq!(code(&o), 0);
    for sub in ["demo", "classify"] {
        for e in fs::read_dir(common::fixture(sub)).unwrap() {
            let e = e.unwrap();
            let fresh = out.path().join(sub).join(e.file_name());
            assert_eq!(fs::read(e.path()).unwrap(), fs::read(&fresh).unwrap(), "{sub}/{:?}", e.file_name());
        }
    }
}

#[test]
fn classify_with_an_external_scorer_process() {
    let dir = common::demo_dir();
    assert_eq!(code(&toxipipe(&["run", "--config", "config.json"], dir.path())), 0);
    let scorer = format!("{} scorer --model work/models/model-0.json", env!("CARGO_BIN_EXE_toxipipe"));
    let o = toxipipe(&["classify", "--config", "config.json", "--scorer", &scorer], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let matched = fs::read_to_string(dir.path().join("work/matched.jsonl")).unwrap().lines().count();
    assert_eq!(out["records"], matched);
}
