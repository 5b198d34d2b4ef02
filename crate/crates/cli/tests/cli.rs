use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn schmidt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schmidt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn demo_reports_delta_outcome_and_witness() {
    let o = schmidt(&["demo", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for needle in ["guaranteed delta", "outcome point", "witness", "replay violations 0"] {
        assert!(text.contains(needle), "missing '{needle}' in\n{text}");
    }
}

#[test]
fn play_writes_identical_reports_for_any_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, threads: &str| {
        let o = schmidt(&[
            "play",
            "--preset",
            "cantor3",
            "--seed",
            "5",
            "--beta",
            "0.3",
            "--threads",
            threads,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(a.path(), "1");
    run(b.path(), "4");
    for name in ["report.json", "transcript.jsonl", "moves.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
    let report: serde_json::Value = serde_json::from_str(&read(a.path(), "report.json")).unwrap();
    assert_eq!(report["all_pass"], true);
    let first = read(a.path(), "transcript.jsonl");
    assert!(first.lines().next().unwrap().starts_with("{\"header\""));
    assert!(read(a.path(), "moves.csv").starts_with("index,owner,radius,x0\n"));
}

#[test]
fn session_file_drives_play() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("session.json");
    fs::write(
        &spec,
        r#"{"ifs": "cantor3",
            "maps": [{"matrix": [[1.0]], "shift": [0.0]}, {"matrix": [[2.0]], "shift": [0.14285714285714285]}],
            "alpha": "auto", "beta": 0.25, "adversary": "greedy", "target_radius": 1e-9, "seed": 11}"#,
    )
    .unwrap();
    let o = schmidt(&["play", "--spec", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["run"]["families"].as_array().unwrap().len(), 2);
    assert_eq!(report["session"]["seed"], 11);
}

#[test]
fn bad_session_file_lists_every_error_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    fs::write(
        &spec,
        r#"{"ifs": {"dim": 1, "maps": [{"ratio": 1.0, "rotation": [0.9], "translation": [0.0]}]}, "alpha": "auto"}"#,
    )
    .unwrap();
    let o = schmidt(&["certify-measure", "--spec", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for needle in ["ratio must be in (0,1)", "not orthogonal", "missing seed"] {
        assert!(err.contains(needle), "missing '{needle}' in\n{err}");
    }
}

#[test]
fn validation_errors_exit_1() {
    assert_eq!(schmidt(&["play", "--preset", "cantor3"]).status.code(), Some(1));
    assert_eq!(schmidt(&["play", "--preset", "menger", "--seed", "1"]).status.code(), Some(1));
    assert_eq!(schmidt(&["play", "--preset", "cantor3", "--seed", "1", "--alpha", "1.5"]).status.code(), Some(1));
    assert_eq!(schmidt(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn caps_exit_2() {
    let o = schmidt(&["dim", "--preset", "sierpinski", "--seed", "1", "--alpha", "0.05", "--m", "30", "--points", "1000"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn certify_measure_emits_a_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let o = schmidt(&["certify-measure", "--preset", "cantor3", "--seed", "2", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cert: serde_json::Value = serde_json::from_str(&read(dir.path(), "certificate.json")).unwrap();
    for key in ["a_pl", "b_pl", "D", "C", "a_decay", "alpha_prime"] {
        assert!(cert[key].as_f64().unwrap() > 0.0, "{key}");
    }
    assert_eq!(read(dir.path(), "certificate.json"), stdout(&o));
}

#[test]
fn verify_ba_reports_witnesses() {
    let o = schmidt(&["verify-ba", "--x", "0.5", "--q-max", "2"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["witness"]["delta_hat"].as_f64(), Some(0.0));

    let o = schmidt(&["verify-ba", "--x", "0.6180339887498949", "--q-from", "300"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let tail = v["tail"]["delta_hat"].as_f64().unwrap();
    assert!((tail - 0.4472).abs() < 0.01, "{tail}");
    assert!(v["continued_fraction"]["trusted"].as_u64().unwrap() >= 15);
}

#[test]
fn dim_emits_tsv_and_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = schmidt(&[
        "dim",
        "--preset",
        "cantor3",
        "--seed",
        "1",
        "--alpha",
        "0.05",
        "--m",
        "4,8",
        "--points",
        "20000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = stdout(&o);
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "beta\tn_beta\tbound\tbox_dim");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1].split('\t').nth(1), Some("16"));
    assert_eq!(read(dir.path(), "sweep.tsv"), tsv);
    assert_eq!(read(dir.path(), "points.csv").lines().count(), 20_001);
}

#[test]
fn simplex_check_is_clean() {
    let o = schmidt(&["simplex-check", "--dim", "2", "--trials", "200", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
}
