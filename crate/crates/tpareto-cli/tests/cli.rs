//! End-to-end checks of the command-line interface.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tpareto"))
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "version": 1,
        "gen": {
            "n_samples": 60,
            "seed": 0,
            "dim": 8,
            "conflict_rate": 0.3,
            "text_len": 2,
            "audio_len": 2,
            "image_count": 1,
            "comment_count": [1, 1]
        },
        "model": {"d": 8, "d_f": 16, "heads": 2, "num_classes": 2},
        "optim": {"batch_size": 16},
        "epochs": 2,
        "seeds": [0],
        "method": "tpareto"
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn train_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .args(["--threads", "1", "--step-report"])
        .output()
        .unwrap();
    assert!(status.status.success(), "stderr: {}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("seed,method,level,f1,recall,precision,acc\n"));
    assert_eq!(csv.lines().count(), 4); // header + 3 levels
    assert!(out.join("metrics.jsonl").exists());
    assert!(out.join("checkpoint-seed0.json").exists());
    let steps = std::fs::read_to_string(out.join("steps-seed0.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(steps.lines().next().unwrap()).unwrap();
    assert!(first["losses"]["all"].is_f64());
    assert!(first["per-module"].is_array());
}

#[test]
fn train_stdout_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |out: &Path| {
        let o = bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(out)
            .args(["--threads", "1"])
            .output()
            .unwrap();
        assert!(o.status.success());
        o.stdout
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b, "identical config must print identical CSV bytes");
    let fa = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let fb = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn gen_data_writes_header_and_instances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("data.jsonl");
    let status = bin()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success());
    let body = std::fs::read_to_string(&out).unwrap();
    let mut lines = body.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["version"], 1);
    assert!(header["config_hash"].as_str().unwrap().len() == 64);
    assert_eq!(lines.count(), 60);
}

#[test]
fn solve_minnorm_reports_weights_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("grads.json");
    std::fs::write(
        &input,
        serde_json::json!({"gradients": [[1.0, 0.0], [0.0, 1.0]]}).to_string(),
    )
    .unwrap();
    let out = bin()
        .args(["solve-minnorm", "--input"])
        .arg(&input)
        .args(["--grid-check", "0.01"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let w = report["weights"].as_array().unwrap();
    assert!((w[0].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((report["min_norm_sq"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((report["oracle_min_norm_sq"].as_f64().unwrap() - 0.5).abs() < 1e-6);
}

#[test]
fn sweep_emits_pivot_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let status = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .args(["--param", "gamma", "--grid", "0.0,0.25", "--threads", "1"])
        .output()
        .unwrap();
    assert!(status.status.success(), "stderr: {}", String::from_utf8_lossy(&status.stderr));
    let table = std::fs::read_to_string(out.join("sweep-gamma-table.csv")).unwrap();
    assert!(table.starts_with("level,0,0.25\n"), "{table}");
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn invalid_config_yields_error_json_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    // generator dim disagrees with the model dim
    std::fs::write(
        &bad,
        serde_json::json!({
            "version": 1,
            "gen": {"dim": 16},
            "model": {"d": 8, "d_f": 16}
        })
        .to_string(),
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    let err: serde_json::Value = serde_json::from_str(line).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("dim"));
}
