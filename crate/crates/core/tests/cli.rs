use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hpcde");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("HPCDE_OUTPUT_ROOT")
        .env_remove("HPCDE_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn generate(dir: &Path, n: &str, seed: &str) {
    ok(&[
        "generate", "--mu", "0.2,0.2", "--alpha", "0.6", "--beta", "1.0", "--horizon", "15", "--n", n, "--seed", seed,
        "--out", dir.to_str().unwrap(),
    ]);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_writes_two_datasets_and_a_sidecar_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, "50", "7");
    generate(&b, "50", "7");
    for f in ["train.json", "test.json", "generator.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let side = json(&a.join("generator.json"));
    assert_eq!(side["train"]["n_sequences"], 50);
    assert_eq!(side["test"]["n_sequences"], 10);
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["command"], "generate");
    assert_eq!(m["seed"], 7);
}

#[test]
fn non_stationary_parameters_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate", "--mu", "0.2", "--alpha", "1.0", "--beta", "1.0", "--horizon", "5", "--n", "3", "--out",
        tmp.path().join("g").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stationary"));
    assert!(!tmp.path().join("g").exists());
}

#[test]
fn missing_dataset_exits_with_data_code_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "train", "--data", tmp.path().join("absent.json").to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_dir.exists());
}

#[test]
fn bad_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"preset": "mimic", "batch_size": 0}"#).unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--preset", "unknown"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_checkpoint_the_initial_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "6", "1");
    let run_dir = tmp.path().join("run");
    ok(&[
        "train", "--data", data.join("train.json").to_str().unwrap(), "--max-iter", "0", "--seed", "4", "--out",
        run_dir.to_str().unwrap(),
    ]);
    let p = hpcde::checkpoint::load(&run_dir).unwrap();
    let config = hpcde::config::preset("synthetic").unwrap().model_config(2);
    assert_eq!(p, hpcde::model::ModelParams::init(config, 4).unwrap());
    let curve = fs::read_to_string(run_dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
    let m = json(&run_dir.join("manifest.json"));
    assert_eq!(m["stop"]["kind"], "max_iter");
    assert_eq!(m["datasets"].as_object().unwrap().len(), 1);
}

#[test]
fn train_evaluate_ablate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "40", "3");
    let train_json = data.join("train.json");
    let run_dir = tmp.path().join("run");
    let cfg = tmp.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"preset": "synthetic", "train_data": {:?}, "max_iter": 8, "batch_size": 8, "learning_rate": 0.01}}"#,
            train_json.to_str().unwrap()
        ),
    )
    .unwrap();
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    let curve = fs::read_to_string(run_dir.join("curve.csv")).unwrap();
    let last: Vec<f64> = curve
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    let final_train_ll = last[5];

    // evaluation on the training data right after training
    let ev = tmp.path().join("ev");
    ok(&[
        "evaluate", "--checkpoint", run_dir.to_str().unwrap(), "--data", train_json.to_str().unwrap(), "--substeps", "4",
        "--out", ev.to_str().unwrap(),
    ]);
    let metrics = json(&ev.join("metrics.json"));
    for field in [
        "sequences",
        "events",
        "log_likelihood",
        "log_likelihood_per_event",
        "accuracy",
        "rmse",
        "macro_f1",
        "classes_in_test",
        "classes_hit",
        "wall_clock_seconds",
        "peak_memory_bytes",
    ] {
        assert!(metrics.get(field).is_some(), "metrics.json lacks {field}");
    }
    let eval_ll = metrics["log_likelihood_per_event"].as_f64().unwrap();
    assert!(
        eval_ll >= final_train_ll - 0.05,
        "evaluation {eval_ll} vs last training epoch {final_train_ll}"
    );
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("sequences,events,log_likelihood"));

    let ab = tmp.path().join("ab");
    ok(&[
        "ablate", "--checkpoint", run_dir.to_str().unwrap(), "--data", data.join("test.json").to_str().unwrap(),
        "--samples", "2000", "--out", ab.to_str().unwrap(),
    ]);
    let report = json(&ab.join("ablation.json"));
    let gap = report["gap"].as_f64().unwrap();
    let ode = report["ode_log_likelihood"].as_f64().unwrap();
    let mc = report["mc_log_likelihood"].as_f64().unwrap();
    assert!((ode - mc - gap).abs() < 1e-9);
    assert!(fs::read_to_string(ab.join("ablation.csv")).unwrap().contains("relative_gap"));
}

#[test]
fn type_count_mismatch_names_both_values() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "6", "2");
    let run_dir = tmp.path().join("run");
    ok(&[
        "train", "--data", data.join("train.json").to_str().unwrap(), "--max-iter", "0", "--out",
        run_dir.to_str().unwrap(),
    ]);
    let three = tmp.path().join("three.json");
    fs::write(&three, r#"{"dim_process": 3, "sequences": [[{"k": 3, "t": 0.5}, {"k": 1, "t": 1.0}]]}"#).unwrap();
    let out = run(&[
        "evaluate", "--checkpoint", run_dir.to_str().unwrap(), "--data", three.to_str().unwrap(), "--out",
        tmp.path().join("ev").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('2') && err.contains('3'), "{err}");
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["generate", "--mu", "0.3", "--alpha", "0.2", "--beta", "1", "--horizon", "5", "--n", "4", "--out", "rel"])
        .env("HPCDE_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("rel").join("train.json").is_file());
}

#[test]
fn inspect_prints_table_shaped_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("d.json");
    fs::write(
        &f,
        r#"{"dim_process": 2, "sequences": [[{"k": 1, "t": 0.5}, {"k": 2, "t": 1.0}], [{"k": 2, "t": 3.0}, {"k": 1, "t": 3.5}, {"k": 1, "t": 4.0}, {"k": 2, "t": 9.0}]]}"#,
    )
    .unwrap();
    let out = ok(&["inspect", f.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("K              2"));
    assert!(text.contains("min 2 / mean 3.00 / max 4"));
    assert!(text.contains("events         6"));
}
