//! End-to-end checks of the CLI surfaces and file formats.

use std::path::Path;
use std::process::Command;

fn preflab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_preflab"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn preflab");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

#[test]
fn gen_sample_train_diagnose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.json");
    let train_csv = dir.path().join("train.csv");
    let val_csv = dir.path().join("val.csv");
    let result_json = dir.path().join("result.json");
    let history_csv = dir.path().join("history.csv");

    // gen: small universe to keep the pipeline fast.
    run_ok(preflab()
        .args(["gen", "--m", "6", "--d", "10", "--hidden", "5", "--embed", "3"])
        .args(["--seed", "3", "--out"])
        .arg(&truth));
    let truth_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(truth_json["items"]["m"], 6);
    assert_eq!(truth_json["model"]["kind"], "cosine_mlp");
    assert_eq!(truth_json["score_table"].as_array().unwrap().len(), 6);

    // sample: CSV with the fixed header.
    run_ok(preflab()
        .arg("sample")
        .arg("--truth")
        .arg(&truth)
        .args(["--n", "2500", "--seed", "5", "--out"])
        .arg(&train_csv));
    run_ok(preflab()
        .arg("sample")
        .arg("--truth")
        .arg(&truth)
        .args(["--n", "200", "--seed", "6", "--out"])
        .arg(&val_csv));
    let text = std::fs::read_to_string(&train_csv).unwrap();
    assert!(text.starts_with("context_id,pos_id,neg_id\n"));
    assert_eq!(text.lines().count(), 2501);

    // train with a small config.
    let cfg = dir.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{"epochs":3,"learning_rates":[0.01],"batch_size":128,"validation_size":200}"#,
    )
    .unwrap();
    run_ok(preflab()
        .arg("train")
        .arg("--truth")
        .arg(&truth)
        .arg("--data")
        .arg(&train_csv)
        .arg("--val")
        .arg(&val_csv)
        .arg("--config")
        .arg(&cfg)
        .args(["--seed", "9", "--out"])
        .arg(&result_json)
        .arg("--history")
        .arg(&history_csv));
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result_json).unwrap()).unwrap();
    assert_eq!(result["selected_lr"], 0.01);
    assert!(result["final_validation_loss"].as_f64().unwrap().is_finite());
    let history = std::fs::read_to_string(&history_csv).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(history.lines().count(), 4);

    // diagnose: sampled BT data is representable at a loose tolerance only;
    // with enough data and tol 0.5 the verdict holds.
    let stdout = run_ok(preflab()
        .arg("diagnose")
        .arg("--data")
        .arg(&train_csv)
        .args(["--m", "6", "--tol", "0.5"]));
    let verdict: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(verdict["representable"].is_boolean());
    assert!(verdict["max_residual"].as_f64().unwrap() >= 0.0);
}

#[test]
fn connectivity_subcommand_tabular_and_variational() {
    let dir = tempfile::tempdir().unwrap();

    // Exact spectral path: 3-path graph gives 1.5.
    let table = dir.path().join("table.json");
    std::fs::write(
        &table,
        r#"{"m":3,"context_marginal":[1.0],
            "tables":[[0.0,0.25,0.0, 0.25,0.0,0.25, 0.0,0.25,0.0]]}"#,
    )
    .unwrap();
    let stdout = run_ok(preflab().arg("connectivity").arg("--table").arg(&table));
    let est: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(est["method"], "tabular_spectral");
    assert!((est["value"].as_f64().unwrap() - 1.5).abs() < 1e-9);

    // Variational path over a generated truth.
    let truth = dir.path().join("truth.json");
    run_ok(preflab()
        .args(["gen", "--m", "5", "--d", "8", "--hidden", "4", "--embed", "3"])
        .args(["--seed", "2", "--out"])
        .arg(&truth));
    let stdout = run_ok(preflab()
        .arg("connectivity")
        .arg("--truth")
        .arg(&truth)
        .args(["--restarts", "2", "--steps", "150", "--seed", "4"]));
    let est: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(est["method"], "variational");
    assert_eq!(est["restarts"], 2);
    assert_eq!(est["per_restart_values"].as_array().unwrap().len(), 2);
    assert!(est["value"].as_f64().unwrap() >= 0.0);
}

#[test]
fn experiment_subcommand_writes_csv_and_honors_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"experiment":"alpha_sweep","m":5,"d":8,"hidden":4,"embed":3,
            "n_grid":[48],"alpha_grid":[-2.0,0.0,2.0],"seeds":[0,1],
            "train":{"epochs":2,"learning_rates":[0.01],"batch_size":32,"validation_size":48},
            "variational":{"restarts":2,"steps":80}}"#,
    )
    .unwrap();
    let out_csv = dir.path().join("alpha.csv");
    run_ok(preflab()
        .env("PREFLAB_THREADS", "1")
        .args(["experiment", "alpha_sweep", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_csv));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# preflab"));
    assert_eq!(
        lines.next().unwrap(),
        "experiment,seed,n,variant,accuracy,acc_bottom10,acc_bottom30,lambda_conn,estimation_error,final_val_loss,status"
    );
    assert_eq!(lines.clone().count(), 3 * 2);
    assert!(lines.all(|l| l.starts_with("alpha_sweep,")));
}

#[test]
fn mismatched_experiment_name_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"experiment":"margin"}"#).unwrap();
    let out = preflab()
        .args(["experiment", "alpha_sweep", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn diagnose_detects_a_planted_cycle() {
    // Hand-written dataset with a 3-cycle of unanimous preferences: the
    // empirical CPRD is one-sided, which diagnose reports as an error exit.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cycle.csv");
    let mut text = String::from("context_id,pos_id,neg_id\n");
    for _ in 0..10 {
        text.push_str("0,0,1\n0,1,2\n0,2,0\n");
    }
    std::fs::write(&data, text).unwrap();
    let out = preflab()
        .arg("diagnose")
        .arg("--data")
        .arg(&data)
        .args(["--m", "3"])
        .output()
        .unwrap();
    assert!(!out.status.success(), "one-sided pairs must error");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("one-sided"), "stderr: {err}");

    // A mixed cycle (majorities 2:1 each way around the triangle) stays
    // two-sided and yields a clean non-representable verdict.
    let data2 = dir.path().join("cycle2.csv");
    let mut text = String::from("context_id,pos_id,neg_id\n");
    for _ in 0..8 {
        text.push_str("0,0,1\n0,0,1\n0,1,0\n");
        text.push_str("0,1,2\n0,1,2\n0,2,1\n");
        text.push_str("0,2,0\n0,2,0\n0,0,2\n");
    }
    std::fs::write(&data2, text).unwrap();
    let stdout = run_ok(preflab()
        .arg("diagnose")
        .arg("--data")
        .arg(&data2)
        .args(["--m", "3", "--tol", "0.001"]));
    let verdict: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(verdict["representable"], false);
    let cycle = &verdict["violating_cycle"];
    assert_eq!(cycle["context"], 0);
    // Cycle log-odds sum: 3 * ln(2) since every edge is 2:1.
    let sum = cycle["log_odds_sum"].as_f64().unwrap().abs();
    assert!((sum - 3.0 * 2.0_f64.ln()).abs() < 1e-9);
}

#[test]
fn sample_is_seed_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.json");
    run_ok(preflab()
        .args(["gen", "--m", "4", "--d", "6", "--hidden", "3", "--embed", "2"])
        .args(["--seed", "1", "--out"])
        .arg(&truth));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        run_ok(preflab()
            .arg("sample")
            .arg("--truth")
            .arg(&truth)
            .args(["--n", "300", "--alpha", "2.0", "--seed", "11", "--out"])
            .arg(path));
    }
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same seed must give identical CSV bytes"
    );
}

#[test]
fn truth_round_trips_through_disk(){
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.json");
    run_ok(preflab()
        .args(["gen", "--m", "4", "--d", "6", "--hidden", "3", "--embed", "2"])
        .args(["--seed", "8", "--out"])
        .arg(&path));
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let truth = preflab::truth::GroundTruth::from_json(&value).unwrap();
    assert!(Path::new(&path).exists());
    assert_eq!(truth.m(), 4);
    // Deterministic regeneration matches the file.
    let regen = preflab::truth::gen_ground_truth(4, 6, 3, 2, 8).unwrap();
    assert_eq!(regen.table, truth.table);
}
