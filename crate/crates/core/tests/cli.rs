//! End-to-end runs of the `c2ae` binary.

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/toy_four_gauss.json");

fn c2ae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2ae"))
        .current_dir(dir)
        .env_remove("C2AE_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = c2ae(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn toy_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-toy", "--kind", "four_gauss", "--n", "500", "--seed", "7", "--out", "toy.csv"]);
    ok(d, &["--config", CONFIG, "train", "--data", "toy.csv", "--out", "m.c2ae"]);

    // no threshold yet
    let early = c2ae(d, &["infer", "--model", "m.c2ae", "--input", "toy.csv"]);
    assert_eq!(early.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&early.stderr).contains("threshold not fitted"));

    ok(d, &["--config", CONFIG, "fit-evt", "--model", "m.c2ae", "--data", "toy.csv", "--pu", "0.5"]);
    ok(d, &["--config", CONFIG, "eval", "--model", "m.c2ae", "--data", "toy.csv", "--report", "r.json"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert!(report["auroc"].as_f64().unwrap() >= 0.95, "{report}");
    assert_eq!(report["p_u"].as_f64(), Some(0.5));

    let infer = ok(d, &["infer", "--model", "m.c2ae", "--input", "toy.csv"]);
    let lines: Vec<serde_json::Value> = String::from_utf8(infer.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2000);

    ok(d, &["--config", CONFIG, "plot-hist", "--model", "m.c2ae", "--data", "toy.csv", "--out", "h.svg", "--csv", "h.csv"]);
    assert!(std::fs::read_to_string(d.join("h.svg")).unwrap().starts_with("<svg"));
    assert_eq!(std::fs::read_to_string(d.join("h.csv")).unwrap().lines().count(), 51);
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-toy", "--kind", "four_gauss", "--n", "100", "--seed", "3", "--out", "toy.csv"]);
    for out in ["a.c2ae", "b.c2ae"] {
        ok(
            d,
            &["--config", CONFIG, "train", "--data", "toy.csv", "--epochs-stage1", "5", "--epochs-stage2", "5", "--out", out],
        );
    }
    assert_eq!(std::fs::read(d.join("a.c2ae")).unwrap(), std::fs::read(d.join("b.c2ae")).unwrap());
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(c2ae(tmp.path(), &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(c2ae(tmp.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_input_file_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = c2ae(tmp.path(), &["infer", "--model", "absent.c2ae", "--input", "absent.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
