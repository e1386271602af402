use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ums_harness::ExperimentManifest;

fn ums(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ums"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write_manifest(dir: &Path, m: &ExperimentManifest) -> String {
    let path = dir.join("m.json");
    fs::write(&path, m.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small() -> ExperimentManifest {
    let mut m = ExperimentManifest::default();
    m.world.ct.image_size = 48;
    m.generation.n_per_class = 4;
    m.training.steps = 10;
    m
}

#[test]
fn prints_the_effective_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = ums(&["manifest", "--seed", "11"], dir.path());
    assert!(out.status.success());
    let m = ExperimentManifest::parse(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(m.seed, 11);
}

#[test]
fn manifest_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, small().to_json().replacen("{", "{\"extra\": true,", 1)).unwrap();
    let out = ums(&["simulate", "--manifest", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));

    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(ums(&["ums", "--manifest", bad.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = small();
    m.generation.class_scale = 1e12;
    let path = write_manifest(dir.path(), &m);
    let out = ums(&["ums", "--manifest", &path, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn io_failures_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = ums(&["report", "--out", "empty"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    for f in ["ums/stage_a.csv", "ums/stage_b.csv", "ums/stage_c.csv", "simulate/metrics.csv"] {
        assert!(err.contains(f), "{err}");
    }

    fs::write(dir.path().join("blocker"), "").unwrap();
    let path = write_manifest(dir.path(), &small());
    let out = ums(&["simulate", "--manifest", &path, "--out", "blocker/sub"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    let out = ums(&["eval", "--manifest", &path, "--out", "untrained"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn verbs_write_their_subtrees() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(dir.path(), &small());
    for verb in ["simulate", "train", "ums", "eval", "report"] {
        let out = ums(&[verb, "--manifest", &path, "--out", "o"], dir.path());
        assert!(out.status.success(), "{verb}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join("o").join(verb).is_dir(), "{verb}");
    }
    let log = fs::read_to_string(dir.path().join("o/run.log")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let mut effective = small();
    effective.outputs = "o".into();
    assert!(log.lines().all(|l| l.contains(&effective.hash())), "{log}");
}
