use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn tagm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagm"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn tagm_stdin(dir: &Path, args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_tagm"))
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn write_csv(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}

fn gen(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["generate", "--n", "400", "--k", "3", "--d", "4", "--cov", "degree_bounded:2", "--means", "uniform:-6:6"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", out]);
    ok(&tagm(dir, &args));
}

#[test]
fn generate_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&tagm(
        dir,
        &["generate", "--n", "2000", "--k", "5", "--d", "10", "--cov", "degree_bounded:3", "--transition", "sudden", "--seed", "7", "--out", "a"],
    ));
    ok(&tagm(
        dir,
        &["generate", "--n", "2000", "--k", "5", "--d", "10", "--cov", "degree_bounded:3", "--transition", "sudden", "--seed", "7", "--out", "b"],
    ));
    for f in ["observations.csv", "labels.txt", "truth.json"] {
        assert_eq!(std::fs::read(dir.join("a").join(f)).unwrap(), std::fs::read(dir.join("b").join(f)).unwrap());
    }
    let rows = read_csv(&dir.join("a/observations.csv"));
    assert_eq!(rows.len(), 2000);
    assert!(rows.iter().all(|r| r.len() == 10));
    let labels = std::fs::read_to_string(dir.join("a/labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 2000);

    let manifest = json(&dir.join("a/manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 7);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    for o in outputs {
        let bytes = std::fs::read(dir.join("a").join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn smooth_transitions_blend_weights() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "g", &["--transition", "fixed_smooth:4", "--seed", "2"]);
    let truth = json(&tmp.path().join("g/truth.json"));
    let weights = truth["weights"].as_array().unwrap();
    let blended = weights
        .iter()
        .filter(|row| row.as_array().unwrap().iter().all(|v| v.as_f64().unwrap() != 1.0))
        .count();
    assert!(blended > 0);
}

#[test]
fn generate_rejects_bad_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tagm(tmp.path(), &["generate", "--d", "3", "--cov", "degree_bounded:3", "--out", "g"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tagm(tmp.path(), &["generate", "--transition", "wobbly", "--out", "g"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_state_fit_recovers_column_means() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 7) as f64, 3.0 + (i % 5) as f64 * 0.5]).collect();
    write_csv(&dir.join("x.csv"), &rows);
    ok(&tagm(dir, &["fit", "--data", "x.csv", "--k", "1", "--out", "f"]));
    let model = json(&dir.join("f/model.json"));
    assert_eq!(model["k"], 1);
    for j in 0..2 {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / 200.0;
        assert!((model["means"][0][j].as_f64().unwrap() - mean).abs() < 1e-9);
    }
    let report = json(&dir.join("f/report.json"));
    assert_eq!(report["labels"].as_array().unwrap().len(), 200);
    assert!(report["bic"].is_number());
    assert!(!report["trace"].as_array().unwrap().is_empty());
}

#[test]
fn fit_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "4"]);
    for out in ["f1", "f2"] {
        ok(&tagm(dir, &["fit", "--data", "g/observations.csv", "--k", "3", "--lambda", "2", "--n-init", "5", "--seed", "3", "--out", out]));
    }
    for f in ["model.json", "report.json"] {
        assert_eq!(std::fs::read(dir.join("f1").join(f)).unwrap(), std::fs::read(dir.join("f2").join(f)).unwrap());
    }
}

#[test]
fn ragged_csv_names_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.csv"), "1,2\n3,4\n5,6,7\n").unwrap();
    let out = tagm(tmp.path(), &["fit", "--data", "bad.csv", "--k", "1", "--out", "f"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
    let out = tagm(tmp.path(), &["fit", "--data", "missing.csv", "--k", "1", "--out", "f"]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn header_flag_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "1", "--header"]);
    let text = std::fs::read_to_string(dir.join("g/observations.csv")).unwrap();
    assert!(text.starts_with("x0,"));
    ok(&tagm(dir, &["fit", "--data", "g/observations.csv", "--header", "--k", "2", "--out", "f"]));
    let out = tagm(dir, &["fit", "--data", "g/observations.csv", "--k", "2", "--out", "f"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn evaluate_with_truth_and_with_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "9", "--kappa", "30"]);
    ok(&tagm(dir, &["fit", "--data", "g/observations.csv", "--k", "3", "--lambda", "5", "--n-init", "3", "--out", "f"]));

    ok(&tagm(dir, &["evaluate", "--model", "f/model.json", "--data", "g/observations.csv", "--truth", "g/truth.json", "--out", "e1"]));
    let full = json(&dir.join("e1/evaluation.json"));
    assert!(full["v_measure"].as_f64().unwrap() > 0.9);
    assert!(full["mcc_mean"].is_number());
    assert!(full["mcc_per_state"].is_array());
    assert!(full.get("mae").is_none());

    ok(&tagm(dir, &["evaluate", "--model", "f/model.json", "--data", "g/observations.csv", "--labels", "g/labels.txt", "--mae", "--out", "e2"]));
    let partial = json(&dir.join("e2/evaluation.json"));
    assert_eq!(partial["v_measure"], full["v_measure"]);
    assert!(partial.get("mcc_mean").is_none());
    assert!(partial.get("mcc_per_state").is_none());
    assert!(partial["mae"].is_number());
}

#[test]
fn truth_model_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&tagm(dir, &["generate", "--n", "300", "--k", "2", "--d", "3", "--cov", "degree_bounded:1", "--means", "uniform:-20:20", "--kappa", "30", "--seed", "3", "--out", "g"]));
    // The truth file doubles as a model file.
    ok(&tagm(dir, &["evaluate", "--model", "g/truth.json", "--data", "g/observations.csv", "--truth", "g/truth.json", "--out", "e"]));
    let eval = json(&dir.join("e/evaluation.json"));
    assert_eq!(eval["v_measure"].as_f64().unwrap(), 1.0);
    assert_eq!(eval["mcc_mean"].as_f64().unwrap(), 1.0);
}

#[test]
fn shuffled_labels_score_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&tagm(dir, &["generate", "--n", "2000", "--k", "5", "--d", "10", "--seed", "5", "--out", "g"]));
    ok(&tagm(dir, &["fit", "--data", "g/observations.csv", "--k", "5", "--lambda", "50", "--n-init", "2", "--out", "f"]));
    let labels: Vec<usize> = std::fs::read_to_string(dir.join("g/labels.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    // Deterministic shuffle: a multiplicative permutation of the indices.
    let n = labels.len();
    let shuffled: Vec<String> = (0..n).map(|i| labels[(i * 1103 + 17) % n].to_string() + "\n").collect();
    std::fs::write(dir.join("shuffled.txt"), shuffled.concat()).unwrap();
    ok(&tagm(dir, &["evaluate", "--model", "f/model.json", "--data", "g/observations.csv", "--labels", "shuffled.txt", "--out", "e"]));
    let eval = json(&dir.join("e/evaluation.json"));
    assert!(eval["v_measure"].as_f64().unwrap() <= 0.05);
}

#[test]
fn evaluate_rejects_mismatched_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "1"]);
    write_csv(&dir.join("narrow.csv"), &[vec![1.0, 2.0], vec![3.0, 4.0]]);
    ok(&tagm(dir, &["fit", "--data", "g/observations.csv", "--k", "2", "--out", "f"]));
    let out = tagm(dir, &["evaluate", "--model", "f/model.json", "--data", "narrow.csv", "--labels", "g/labels.txt", "--out", "e"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn predict_single_state_and_mae() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i % 3) as f64, -(i % 4) as f64]).collect();
    write_csv(&dir.join("x.csv"), &rows);
    ok(&tagm(dir, &["fit", "--data", "x.csv", "--k", "1", "--out", "f"]));
    let out = tagm(dir, &["predict", "--model", "f/model.json", "--data", "x.csv", "--out", "p"]);
    ok(&out);
    let model = json(&dir.join("f/model.json"));
    let mu: Vec<f64> = (0..2).map(|j| model["means"][0][j].as_f64().unwrap()).collect();
    let preds = read_csv(&dir.join("p/predictions.csv"));
    assert_eq!(preds.len(), 50);
    assert!(preds.iter().all(|r| r == &mu));

    // Recompute the error from the emitted predictions.
    let expected: f64 = (0..49)
        .map(|n| (0..2).map(|j| (rows[n + 1][j] - preds[n][j]).abs()).sum::<f64>() / 2.0)
        .sum::<f64>()
        / 49.0;
    let report = json(&dir.join("p/report.json"));
    assert!((report["mae"].as_f64().unwrap() - expected).abs() < 1e-12);
    let printed = String::from_utf8_lossy(&out.stdout);
    let value: f64 = printed.trim().strip_prefix("mae ").unwrap().parse().unwrap();
    assert_eq!(value, report["mae"].as_f64().unwrap());
}

#[test]
fn predict_constant_data_has_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("model.json"),
        r#"{"k":1,"d":2,"pi":[1.0],"a":[[1.0]],"means":[[2.5,-1.0]],"precisions":[{"dim":2,"triplets":[[0,0,1.0],[1,1,1.0]]}]}"#,
    )
    .unwrap();
    write_csv(&dir.join("x.csv"), &vec![vec![2.5, -1.0]; 10]);
    ok(&tagm(dir, &["predict", "--model", "model.json", "--data", "x.csv", "--out", "p"]));
    assert_eq!(json(&dir.join("p/report.json"))["mae"].as_f64().unwrap(), 0.0);
    let out = tagm(dir, &["predict", "--model", "model.json", "--data", "x.csv", "--horizon", "2", "--out", "p"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn select_reports_every_candidate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "6", "--kappa", "30"]);
    ok(&tagm(
        dir,
        &["select", "--data", "g/observations.csv", "--k-range", "2..4", "--lambda-grid", "1,5", "--repeats", "3", "--out", "s"],
    ));
    let sel = json(&dir.join("s/selection.json"));
    assert_eq!(sel["k_candidates"].as_array().unwrap().len(), 3);
    assert_eq!(sel["lambda_candidates"].as_array().unwrap().len(), 2);
    assert_eq!(sel["lambda_for_k"].as_f64().unwrap(), 1.0);
    assert!(sel["k_candidates"][0]["report"]["score"].is_number());
    assert!(sel["lambda_candidates"][0]["dispersion"].is_number());

    ok(&tagm(dir, &["select", "--data", "g/observations.csv", "--k-range", "2", "--lambda-grid", "3", "--out", "s1"]));
    let single = json(&dir.join("s1/selection.json"));
    assert_eq!(single["chosen_k"], 2);
    assert_eq!(single["chosen_lambda"].as_f64().unwrap(), 3.0);
}

fn stream_input(path: &Path, from: usize) -> String {
    std::fs::read_to_string(path).unwrap().lines().skip(from).map(|l| l.to_string() + "\n").collect()
}

#[test]
fn stream_without_rows_keeps_the_batch_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "8"]);
    ok(&tagm(dir, &["fit", "--data", "g/observations.csv", "--k", "3", "--lambda", "2", "--out", "f"]));
    let out = tagm_stdin(dir, &["stream", "--batch", "g/observations.csv", "--k", "3", "--lambda", "2", "--out", "s"], "");
    ok(&out);
    assert!(out.stdout.is_empty());
    assert_eq!(std::fs::read(dir.join("f/model.json")).unwrap(), std::fs::read(dir.join("s/model.json")).unwrap());
}

#[test]
fn stream_modes_and_records() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "10"]);
    let rows = read_csv(&dir.join("g/observations.csv"));
    write_csv(&dir.join("batch.csv"), &rows[..250]);
    let input = stream_input(&dir.join("g/observations.csv"), 250);

    let inc = tagm_stdin(dir, &["stream", "--batch", "batch.csv", "--k", "3", "--lambda", "2", "--out", "s1"], &input);
    ok(&inc);
    let slide = tagm_stdin(
        dir,
        &["stream", "--batch", "batch.csv", "--k", "3", "--lambda", "2", "--mode", "slide", "--window", "400", "--out", "s2"],
        &input,
    );
    ok(&slide);
    assert_eq!(inc.stdout, slide.stdout);

    let records: Vec<Value> = String::from_utf8(inc.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 150);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["t"].as_u64().unwrap() as usize, 251 + i);
        let total: f64 = r["gamma"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(r["prediction"].as_array().unwrap().len(), 4);
        assert!(r["refit"].as_bool().unwrap());
    }

    let windowed = tagm_stdin(
        dir,
        &["stream", "--batch", "batch.csv", "--k", "3", "--lambda", "2", "--mode", "slide", "--window", "100", "--out", "s3"],
        &input,
    );
    ok(&windowed);
    assert_ne!(windowed.stdout, slide.stdout);
    let out = tagm(dir, &["stream", "--batch", "batch.csv", "--mode", "slide", "--out", "s4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stream_reports_bad_rows_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "g", &["--seed", "12"]);
    ok(&tagm(dir, &["fit", "--data", "g/observations.csv", "--k", "3", "--out", "f"]));
    let input = "1,2,3,4\n1,2\nfoo,1,2,3\n0.5,0.5,0.5,0.5\n";
    let out = tagm_stdin(
        dir,
        &["stream", "--batch", "g/observations.csv", "--model", "f/model.json", "--k", "3", "--refit-stride", "2", "--out", "s"],
        input,
    );
    ok(&out);
    let records: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 4);
    assert_eq!(records[0]["t"], 401);
    assert_eq!(records[0]["refit"], false);
    assert!(records[1]["error"].is_string());
    assert_eq!(records[1]["line"], 2);
    assert!(records[2]["error"].is_string());
    assert_eq!(records[3]["t"], 402);
    assert_eq!(records[3]["refit"], true);
}
