use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn layerprune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerprune"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = layerprune(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is one JSON document");
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

/// Pretrained 2x16 model with importance scores, small enough for tests.
fn prepared(dir: &Path) {
    let spec = dir.join("spec.json");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(
        &spec,
        r#"{"num_layers":2,"hidden_widths":[16,16],"input_dim":16,"num_classes":4,"activation":"gelu","residual":true}"#,
    )
    .unwrap();
    ok(dir, &["pretrain", "--seed", "3", "--model-spec", spec.to_str().unwrap(), "--epochs", "3"]);
    ok(dir, &["calibrate", "--metric", "wanda"]);
}

const SMALL_SEARCH: [&str; 4] = ["--simulations", "20", "--eval-cap", "15"];

#[test]
fn stages_chain_through_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    ok(dir, &[&["search", "--b", "0.3"][..], &SMALL_SEARCH].concat());
    assert!(dir.join("search_b0.3000.json").exists());
    assert!(dir.join("search_b0.3000.trace.jsonl").exists());
    ok(dir, &[&["gen-dataset", "--b-grid", "0.2:0.4:0.1"][..], &SMALL_SEARCH].concat());
    let dataset: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(dataset["samples"].as_array().unwrap().len(), 3);
    ok(dir, &["train-predictor", "--backbone", "mlp", "--epochs", "2"]);
    let curve = std::fs::read_to_string(dir.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    let pred: Value = serde_json::from_str(&ok(dir, &["predict", "--b", "0.25", "0.35"])).unwrap();
    assert_eq!(pred["provenance"], "trained");
    assert_eq!(pred["predictions"].as_array().unwrap().len(), 2);

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    for name in ["model.json", "importance.json", "dataset.json", "predictor.json", "prediction.json"] {
        assert!(manifest["artifacts"][name]["sha256"].is_string(), "{name} not recorded");
    }
    assert_eq!(manifest["metric"], "wanda");
}

#[test]
fn bench_reports_two_rows_for_two_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    ok(dir, &[&["gen-dataset", "--b-grid", "0.3:0.3:0.1"][..], &SMALL_SEARCH].concat());
    ok(dir, &["train-predictor", "--backbone", "transformer-ar", "--epochs", "0"]);
    let pred: Value = serde_json::from_str(&ok(dir, &["predict", "--b", "0.3"])).unwrap();
    assert_eq!(pred["provenance"], "untrained");
    let csv = ok(
        dir,
        &[&["bench", "--b", "0.3", "--methods", "lop,mcts", "--repetitions", "1"][..], &SMALL_SEARCH].concat(),
    );
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,b,accuracy,acc_drop,strategy_seconds,speedup");
    assert_eq!(lines.len(), 3);
    let cells = |l: &str| l.split(',').map(str::to_string).collect::<Vec<_>>();
    let lop = cells(lines[1]);
    let mcts = cells(lines[2]);
    assert_eq!((lop[0].as_str(), mcts[0].as_str()), ("lop", "mcts"));
    assert!(lop[5].parse::<f64>().unwrap() > 1.0);
    assert_eq!(mcts[5], "1");
    // mcts accuracy is the reward stored in the dataset for the same budget
    let dataset: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(mcts[2].parse::<f64>().unwrap(), dataset["samples"][0]["reward"].as_f64().unwrap());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("bench_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["predictor_provenance"], "untrained");
    assert_eq!(meta["reference"], "mcts");
}

#[test]
fn infeasible_budget_is_a_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    prepared(tmp.path());
    let out = layerprune(tmp.path(), &["search", "--b", "0.05"]);
    assert_eq!(error_kind(&out), "infeasible_budget");
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = layerprune(tmp.path(), &["calibrate"]);
    assert_eq!(error_kind(&out), "missing_file");
}

#[test]
fn edited_artifacts_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    let path = dir.join("importance.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["layers"][0][0] = Value::from(123.0);
    std::fs::write(&path, v.to_string()).unwrap();
    let out = layerprune(dir, &[&["search", "--b", "0.3"][..], &SMALL_SEARCH].concat());
    assert_eq!(error_kind(&out), "fingerprint_mismatch");
}

#[test]
fn malformed_model_spec_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, r#"{"num_layers":"six"}"#).unwrap();
    let out = layerprune(tmp.path(), &["pretrain", "--model-spec", spec.to_str().unwrap()]);
    assert_eq!(error_kind(&out), "schema");
}

#[test]
fn unknown_metric_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    prepared(tmp.path());
    let out = layerprune(tmp.path(), &["calibrate", "--metric", "entropy"]);
    assert_eq!(error_kind(&out), "invalid_argument");
}
