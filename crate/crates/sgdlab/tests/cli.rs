//! End-to-end tests of the sgdlab binary: exit codes, artifact layout and
//! byte-identical reruns.

use std::path::Path;
use std::process::{Command, Output};

fn sgdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdlab"))
        .args(args)
        .env_remove("SGDLAB_SEED")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

#[test]
fn generate_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = sgdlab(&[
            "generate",
            "--problem",
            "least_squares",
            "--n",
            "12",
            "--d",
            "3",
            "--noise",
            "0.2",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    }
    let csv = read(&out_a, "dataset.csv");
    assert_eq!(csv, read(&out_b, "dataset.csv"), "same seed must give byte-identical CSV");
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x_0,x_1,x_2,y");
    assert_eq!(text.lines().count(), 13);
    let spec: serde_json::Value = serde_json::from_slice(&read(&out_a, "spec.json")).unwrap();
    assert_eq!(spec["seed"], 7);
    assert_eq!(spec["kind"], "least_squares");
}

#[test]
fn missing_problem_exits_2() {
    let res = sgdlab(&["train"]);
    assert_eq!(res.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&res.stderr);
    assert!(msg.contains("--problem"), "stderr must name the flag: {msg}");
}

#[test]
fn unknown_config_key_exits_2_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"problem": "ls", "bogus_field": 3}"#).unwrap();
    let res = sgdlab(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&res.stderr);
    assert!(msg.contains("bogus_field"), "stderr must name the key: {msg}");
}

#[test]
fn resolved_config_round_trips_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = sgdlab(&[
        "generate",
        "--problem",
        "ridge",
        "--n",
        "8",
        "--d",
        "2",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    // feed resolved.json back in as the config file; flags omitted
    let out2 = dir.path().join("run2");
    let res = sgdlab(&[
        "generate",
        "--config",
        out.join("resolved.json").to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read(&out, "dataset.csv"), read(&out2, "dataset.csv"));
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"problem": "least_squares", "n": 10, "d": 2, "seed": 5}"#).unwrap();
    let out = dir.path().join("o");
    let res = sgdlab(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let resolved: serde_json::Value = serde_json::from_slice(&read(&out, "resolved.json")).unwrap();
    assert_eq!(resolved["n"], 4);
    let csv = String::from_utf8(read(&out, "dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "flag --n 4 must win over file n=10");
}

#[test]
fn train_emits_trajectory_and_risk_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let res = sgdlab(&[
        "train",
        "--problem",
        "least_squares",
        "--n",
        "16",
        "--d",
        "3",
        "--R",
        "10",
        "--eta",
        "0.3",
        "--seed",
        "2",
        "--n-test",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let jsonl = String::from_utf8(read(&out, "trajectory.jsonl")).unwrap();
    let lines: Vec<&str> = jsonl.lines().collect();
    assert!(lines.len() >= 11);
    let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(last["summary"], true);
    let risk: serde_json::Value = serde_json::from_slice(&read(&out, "risk.json")).unwrap();
    assert!(risk["excess_risk"].is_number());
    assert!(risk["provenance"]["config_sha256"].is_string());
    assert_eq!(risk["provenance"]["master_seed"], 2);
}

#[test]
fn stability_writes_estimate_with_bound_reports_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let mut first = Vec::new();
    for pass in 0..2 {
        let res = sgdlab(&[
            "stability",
            "--problem",
            "least_squares",
            "--n",
            "24",
            "--d",
            "3",
            "--R",
            "8",
            "--b",
            "2",
            "--eta",
            "0.3",
            "--replicates",
            "4",
            "--subsample",
            "4",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
        if pass == 0 {
            first = read(&out, "stability.json");
        }
    }
    let a = read(&out, "stability.json");
    assert_eq!(a, first, "rerunning the same config must reproduce bytes");
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["estimate"]["coupling"], "shared_path");
    let reports = v["bound_reports"].as_array().unwrap();
    assert!(reports.len() >= 3, "convex l1/l2 plus generalization reports expected");
    assert_eq!(reports[0]["report"]["theorem_id"], "MB_CONVEX_L1");
    for r in reports {
        assert_ne!(r["verdict"], "violated", "bound comparison must not be violated: {r}");
    }
}

#[test]
fn stability_local_trainer_emits_local_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("loc");
    let res = sgdlab(&[
        "stability",
        "--problem",
        "least_squares",
        "--n",
        "16",
        "--d",
        "3",
        "--trainer",
        "local",
        "--M",
        "2",
        "--K",
        "2",
        "--R",
        "3",
        "--eta",
        "0.3",
        "--replicates",
        "3",
        "--subsample",
        "4",
        "--seed",
        "13",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let v: serde_json::Value = serde_json::from_slice(&read(&out, "stability.json")).unwrap();
    let ids: Vec<&str> =
        v["bound_reports"].as_array().unwrap().iter().map(|r| r["report"]["theorem_id"].as_str().unwrap()).collect();
    assert!(ids.contains(&"LOCAL_L1") && ids.contains(&"LOCAL_L2"), "got {ids:?}");
}

#[test]
fn speedup_machine_axis_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let res = sgdlab(&[
        "speedup",
        "--problem",
        "least_squares",
        "--n",
        "64",
        "--d",
        "8",
        "--noise",
        "1.0",
        "--axis",
        "machine",
        "--K",
        "2",
        "--values",
        "1,2",
        "--replicates",
        "3",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let csv = String::from_utf8(read(&out, "speedup.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("machines_m,1,"));
}

#[test]
fn speedup_batch_sweep_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let res = sgdlab(&[
        "speedup",
        "--problem",
        "least_squares",
        "--n",
        "64",
        "--d",
        "8",
        "--noise",
        "3.0",
        "--axis",
        "batch",
        "--values",
        "2,4",
        "--replicates",
        "3",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let csv = String::from_utf8(read(&out, "speedup.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "axis,value,excess_risk,se,gen_gap,opt_gap,steps");
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("batch_b,2,"));
}

#[test]
fn verify_exact_suite_exits_zero_and_report_renders() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let res = sgdlab(&[
        "verify",
        "--suite",
        "exact",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("[PASS] exact.nonexpansive"));
    let res = sgdlab(&["report", "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let md = String::from_utf8(read(&out, "report.md")).unwrap();
    assert!(md.contains("## Verification checks"));
    assert!(md.contains("exact.telescoping"));
}

#[test]
fn seed_env_var_fallback_controls_data() {
    let dir = tempfile::tempdir().unwrap();
    let out_env = dir.path().join("env");
    let res = Command::new(env!("CARGO_BIN_EXE_sgdlab"))
        .args(["generate", "--problem", "ls", "--n", "6", "--d", "2", "--out", out_env.to_str().unwrap()])
        .env("SGDLAB_SEED", "99")
        .output()
        .unwrap();
    assert!(res.status.success());
    let out_flag = dir.path().join("flag");
    let res = sgdlab(&[
        "generate", "--problem", "ls", "--n", "6", "--d", "2", "--seed", "99", "--out",
        out_flag.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert_eq!(read(&out_env, "dataset.csv"), read(&out_flag, "dataset.csv"));
}
