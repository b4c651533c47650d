use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn refine3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refine3d"))
        .args(args)
        .env_remove("REFINE3D_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = refine3d(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, seed: u64, count: u64) {
    ok(&["gen", "--seed", &seed.to_string(), "--count", &count.to_string(), "--out", s(dir)]);
}

fn oracle_config(dir: &Path) -> PathBuf {
    let p = dir.join("oracle.json");
    fs::write(&p, r#"{"vote_source":"oracle","param_init":"planted"}"#).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object")
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    gen(&a, 11, 2);
    gen(&b, 11, 2);
    for name in ["scene_0000.json", "scene_0001.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    assert_ne!(fs::read(a.join("scene_0000.json")).unwrap(), fs::read(a.join("scene_0001.json")).unwrap());
    assert_eq!(read_json(&a.join("manifest.json"))["command"], "gen");
}

#[test]
fn run_writes_per_scene_outputs_and_manifest() {
    let t = TempDir::new().unwrap();
    let scenes = t.path().join("scenes");
    gen(&scenes, 3, 2);
    let cfg = oracle_config(t.path());
    let out = t.path().join("run");
    ok(&["run", "--config", s(&cfg), "--scenes", s(&scenes), "--jobs", "2", "--out", s(&out)]);
    for stem in ["scene_0000", "scene_0001"] {
        let dets = read_json(&out.join(format!("{stem}.detections.json")));
        assert!(!dets.as_array().unwrap().is_empty());
        assert!(read_json(&out.join(format!("{stem}.losses.json")))["total"].is_number());
        assert!(out.join(format!("{stem}.timing.json")).exists());
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["command"], "run");
    assert_eq!(m["scenes"].as_array().unwrap().len(), 2);
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn run_is_idempotent() {
    let t = TempDir::new().unwrap();
    let scenes = t.path().join("scenes");
    gen(&scenes, 5, 1);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for out in [&a, &b] {
        ok(&["run", "--scenes", s(&scenes), "--out", s(out)]);
    }
    for f in ["scene_0000.detections.json", "scene_0000.losses.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn oracle_run_evaluates_to_perfect_map() {
    let t = TempDir::new().unwrap();
    let scenes = t.path().join("scenes");
    gen(&scenes, 21, 3);
    let cfg = oracle_config(t.path());
    let dets = t.path().join("dets");
    ok(&["run", "--config", s(&cfg), "--scenes", s(&scenes), "--out", s(&dets)]);
    let ev = t.path().join("eval");
    ok(&["eval", "--dets", s(&dets), "--gt", s(&scenes), "--out", s(&ev)]);
    let report = read_json(&ev.join("eval.json"));
    for (_, v) in report["map"].as_object().unwrap() {
        assert_eq!(v.as_f64().unwrap(), 1.0);
    }
    assert!(fs::read_to_string(ev.join("eval.csv")).unwrap().lines().count() > 1);
}

#[test]
fn eval_ignores_detection_file_order() {
    let t = TempDir::new().unwrap();
    let scenes = t.path().join("scenes");
    gen(&scenes, 8, 2);
    let dets = t.path().join("dets");
    ok(&["run", "--scenes", s(&scenes), "--out", s(&dets)]);
    let ev1 = t.path().join("e1");
    ok(&["eval", "--dets", s(&dets), "--gt", s(&scenes), "--out", s(&ev1)]);
    for stem in ["scene_0000", "scene_0001"] {
        let p = dets.join(format!("{stem}.detections.json"));
        let mut v = read_json(&p);
        v.as_array_mut().unwrap().reverse();
        fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    }
    let ev2 = t.path().join("e2");
    ok(&["eval", "--dets", s(&dets), "--gt", s(&scenes), "--out", s(&ev2)]);
    assert_eq!(read_json(&ev1.join("eval.json")), read_json(&ev2.join("eval.json")));
}

#[test]
fn exit_codes_distinguish_usage_config_and_io() {
    let t = TempDir::new().unwrap();
    let usage = refine3d(&["frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(stderr_json(&usage)["kind"], "usage");

    let scenes = t.path().join("scenes");
    gen(&scenes, 1, 1);
    let bad = t.path().join("bad.json");
    fs::write(&bad, r#"{"no_such_key": 1}"#).unwrap();
    let config = refine3d(&["run", "--config", s(&bad), "--scenes", s(&scenes), "--out", s(t.path())]);
    assert_eq!(config.status.code(), Some(3));
    assert_eq!(stderr_json(&config)["kind"], "config");

    let missing = t.path().join("missing");
    let io = refine3d(&["run", "--scenes", s(&missing), "--out", s(t.path())]);
    assert_eq!(io.status.code(), Some(4));
    assert_eq!(stderr_json(&io)["kind"], "io");
}

#[test]
fn out_dir_falls_back_to_environment() {
    let t = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_refine3d"))
        .args(["gen", "--seed", "2"])
        .env("REFINE3D_OUT", t.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(t.path().join("scene_0000.json").exists());
    assert_eq!(refine3d(&["gen", "--seed", "2"]).status.code(), Some(2));
}

#[test]
fn archived_params_reproduce_a_run() {
    let t = TempDir::new().unwrap();
    let scenes = t.path().join("scenes");
    gen(&scenes, 4, 1);
    let archive = t.path().join("params").join("model.bin");
    ok(&["params", "--out", s(&archive)]);
    assert!(archive.exists());
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["run", "--scenes", s(&scenes), "--out", s(&a)]);
    ok(&["run", "--scenes", s(&scenes), "--params", s(&archive), "--out", s(&b)]);
    let f = "scene_0000.detections.json";
    assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
}
