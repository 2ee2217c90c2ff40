//! End-to-end tests against the built binary: exit codes, report fields,
//! file round trips, and byte-reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_crdiff");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn instance_file(dir: &TempDir, k: u64) -> PathBuf {
    let body = json!({
        "A": ["a1", "a2", "a3", "a4"],
        "C": [["a1", "a2"], ["a2", "a3", "a4"], ["a1", "a3", "a4"]],
        "K": k,
    });
    write(dir, &format!("instance_k{k}.json"), &body.to_string())
}

/// reduce → eval → schedule search → lift, all through the binary.
#[test]
fn full_pipeline_on_the_running_instance() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let artifact = dir.path().join("artifact.json");

    let out = run(&[
        "reduce",
        instance.to_str().unwrap(),
        "--p",
        "3",
        "--out",
        artifact.to_str().unwrap(),
        "--json",
        "--no-timing",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["q"], json!(3));
    assert_eq!(report["k_prime"], json!(5));
    assert_eq!(report["padding_primes"], json!([11]));

    let art: Value =
        serde_json::from_str(&std::fs::read_to_string(&artifact).unwrap()).unwrap();
    let chain = write(&dir, "chain.json", &art["chain"].to_string());

    let out = run(&[
        "eval",
        chain.to_str().unwrap(),
        "--order",
        "p",
        "--p",
        "3",
        "--optimal-schedule",
        "--json",
        "--no-timing",
    ]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["value"], json!(["66", "105", "70"]));
    assert_eq!(report["mults"], json!(18));
    assert_eq!(report["optimal_mults"], json!(5));

    let schedule = write(&dir, "schedule.json", &report["schedule"].to_string());
    let out = run(&[
        "lift",
        schedule.to_str().unwrap(),
        artifact.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let seq: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(seq["ops"].as_array().unwrap().len(), 4);
}

#[test]
fn eval_first_and_second_order() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    // p = 2 so every edge carries an order-2 tensor (zero past the first).
    let out = run(&["reduce", instance.to_str().unwrap(), "--p", "2"]);
    assert!(out.status.success());
    let art: Value = serde_json::from_slice(&out.stdout).unwrap();
    let chain = write(&dir, "chain.json", &art["chain"].to_string());

    let out = run(&["eval", chain.to_str().unwrap(), "--json", "--no-timing"]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["order"], json!("1"));
    assert_eq!(report["shape"], json!([3, 1]));

    let out = run(&[
        "eval",
        chain.to_str().unwrap(),
        "--order",
        "2",
        "--json",
        "--no-timing",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["shape"], json!([3, 1, 1]));
}

#[test]
fn eval_rejects_p_without_order_p() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let out = run(&["reduce", instance.to_str().unwrap(), "--p", "1"]);
    let art: Value = serde_json::from_slice(&out.stdout).unwrap();
    let chain = write(&dir, "chain.json", &art["chain"].to_string());

    let out = run(&["eval", chain.to_str().unwrap(), "--p", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bracket_reports_the_minimum() {
    let out = run(&["bracket", "10", "100", "5", "50", "--json", "--no-timing"]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["optimum"], json!(7500));
    assert_eq!(report["association"], json!("(F3*(F2*F1))"));

    // A bare two-dim chain has exactly one (empty) association.
    let out = run(&["bracket", "7", "9", "--json", "--no-timing"]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["optimum"], json!(0));
}

#[test]
fn schedule_decides_against_the_budget() {
    let dir = TempDir::new().unwrap();
    let targets = write(
        &dir,
        "targets.json",
        &json!({"targets": [["a", "b"], ["b", "c"], ["c", "a"]]}).to_string(),
    );

    let out = run(&["schedule", targets.to_str().unwrap(), "-k", "2", "--json", "--no-timing"]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["decision"], json!(false));
    assert_eq!(report["optimum"], json!(3));

    let out = run(&["schedule", targets.to_str().unwrap(), "-k", "3"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn ec_solve_decides_against_the_instance_budget() {
    let dir = TempDir::new().unwrap();

    let out = run(&["ec", instance_file(&dir, 4).to_str().unwrap(), "solve", "--json", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["decision"], json!(true));
    assert_eq!(report["optimum"], json!(4));

    let out = run(&["ec", instance_file(&dir, 3).to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ec_verify_accepts_and_rejects() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let good = write(
        &dir,
        "good.json",
        &json!({"ops": [
            {"s": "label:a1", "t": "label:a2"},
            {"s": "label:a3", "t": "label:a4"},
            {"s": "label:a1", "t": "op:1"},
            {"s": "label:a2", "t": "op:1"},
        ]})
        .to_string(),
    );
    let out = run(&[
        "ec",
        instance.to_str().unwrap(),
        "verify",
        "--sequence",
        good.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    // Missing {a2,a3,a4}: too many unions for the budget is fine, absence is not.
    let bad = write(
        &dir,
        "bad.json",
        &json!({"ops": [
            {"s": "label:a1", "t": "label:a2"},
            {"s": "label:a1", "t": "label:a3"},
        ]})
        .to_string(),
    );
    let out = run(&[
        "ec",
        instance.to_str().unwrap(),
        "verify",
        "--sequence",
        bad.to_str().unwrap(),
        "--json",
        "--no-timing",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["decision"], json!(false));
    assert!(report["reason"].as_str().is_some());
}

#[test]
fn reduce_output_round_trips_through_lift_files() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);

    let out = run(&["reduce", instance.to_str().unwrap(), "--p", "3"]);
    assert!(out.status.success());
    let art: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["instance", "p", "prime_map", "padding_primes", "padded_subsets", "q", "k_prime", "f1_coefficients", "chain"] {
        assert!(art.get(key).is_some(), "artifact lacks {key}");
    }
}

#[test]
fn dot_renders_both_file_kinds() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let artifact = dir.path().join("artifact.json");
    let out = run(&[
        "reduce",
        instance.to_str().unwrap(),
        "--p",
        "3",
        "--out",
        artifact.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let art: Value =
        serde_json::from_str(&std::fs::read_to_string(&artifact).unwrap()).unwrap();
    let chain = write(&dir, "chain.json", &art["chain"].to_string());

    let out = run(&["dot", chain.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("digraph"));
    assert!(text.contains("v0 -> v1"));

    let out = run(&["dot", artifact.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("digraph"));
    assert!(text.contains("z1_1"));
}

#[test]
fn scalar_flag_enforces_the_declared_field() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let out = run(&["reduce", instance.to_str().unwrap(), "--p", "1"]);
    let art: Value = serde_json::from_slice(&out.stdout).unwrap();
    let chain = write(&dir, "chain.json", &art["chain"].to_string());

    let out = run(&["eval", chain.to_str().unwrap(), "--scalar", "rational"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["eval", chain.to_str().unwrap(), "--scalar", "float"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reports_are_byte_reproducible_without_timing() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let args = ["ec", instance.to_str().unwrap(), "solve", "--json", "--no-timing"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.is_empty());

    // With timing on, the only difference is the time_ms field.
    let timed = run(&["ec", instance.to_str().unwrap(), "solve", "--json"]);
    let timed = stdout_json(&timed);
    assert!(timed["time_ms"].as_f64().is_some());
}

#[test]
fn malformed_and_missing_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = run(&["eval", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let garbage = write(&dir, "garbage.json", "{\"vertices\": \"nope\"");
    let out = run(&["eval", garbage.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["ec", instance_file(&dir, 0).to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(2), "K = 0 violates the instance contract");
}

#[test]
fn lift_rejects_a_schedule_that_does_not_verify() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let artifact = dir.path().join("artifact.json");
    run(&[
        "reduce",
        instance.to_str().unwrap(),
        "--p",
        "3",
        "--out",
        artifact.to_str().unwrap(),
    ]);

    // One lonely step cannot produce the three targets.
    let bogus = write(
        &dir,
        "bogus.json",
        &json!({
            "steps": [{"a": "atom:e0-1.o3.0_0_0_0", "b": "atom:e0-1.o3.1_0_0_0", "accumulate_into": null}],
            "targets": [[], [], []],
        })
        .to_string(),
    );
    let out = run(&["lift", bogus.to_str().unwrap(), artifact.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lift_out_flag_writes_the_sequence_file() {
    let dir = TempDir::new().unwrap();
    let instance = instance_file(&dir, 4);
    let artifact = dir.path().join("artifact.json");
    run(&["reduce", path_str(&instance), "--p", "3", "--out", path_str(&artifact)]);
    let art: Value =
        serde_json::from_str(&std::fs::read_to_string(&artifact).unwrap()).unwrap();
    let chain = write(&dir, "chain.json", &art["chain"].to_string());

    let out = run(&[
        "eval", path_str(&chain), "--order", "p", "--p", "3",
        "--optimal-schedule", "--json", "--no-timing",
    ]);
    let schedule = write(&dir, "schedule.json", &stdout_json(&out)["schedule"].to_string());

    let seq_path = dir.path().join("sequence.json");
    let out = run(&[
        "lift", path_str(&schedule), path_str(&artifact),
        "--out", path_str(&seq_path), "--json", "--no-timing",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["unions"], json!(4));
    let seq: Value =
        serde_json::from_str(&std::fs::read_to_string(&seq_path).unwrap()).unwrap();
    assert_eq!(seq["ops"].as_array().unwrap().len(), 4);

    // The lifted sequence certifies the original instance.
    let out = run(&[
        "ec", path_str(&instance), "verify", "--sequence", path_str(&seq_path),
    ]);
    assert_eq!(out.status.code(), Some(0));
}
