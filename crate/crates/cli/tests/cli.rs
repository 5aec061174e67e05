use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcsent::features::{write_feature_csv, FeatureVector};
use dcsent::Sentiment;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn dcsent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsent")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const TOY: &str = r#"{"id":"a","text":"The food was great. The staff were friendly.","label":2}
{"id":"b","text":"The room was dirty. Service was rude.","label":0}
{"id":"c","text":"We arrived on Monday. We left on Friday.","label":1}
"#;

#[test]
fn segment_writes_one_record_per_passage() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(&dir, "toy.jsonl", TOY);
    let output = dir.path().join("seg.jsonl");
    ok(&dcsent(&["segment", "--input", p(&input), "--output", p(&output)]));
    let recs = jsonl(&output);
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0]["passage_id"], "a");
    assert_eq!(recs[0]["texts"][1], "The staff were friendly.");
    assert_eq!(recs[0]["spans"][0], serde_json::json!([0, 19]));
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = dcsent(&["segment", "--input", p(&missing), "--output", p(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ") && err.contains("nope.jsonl"), "{err}");
}

#[test]
fn invalid_record_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(&dir, "bad.jsonl", "{\"id\":\"a\",\"text\":\"x\",\"label\":1}\n{\"id\":\"b\",\"label\":1}\n");
    let out = dcsent(&["segment", "--input", p(&input), "--output", p(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn abbreviation_file_changes_dr_smith() {
    let golden = std::fs::read_to_string(fixture("segmenter_golden.jsonl")).unwrap();
    let case: serde_json::Value = golden
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|c| c["id"] == "abbr_dr")
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let record = serde_json::json!({"id": "dr", "text": case["text"], "label": 1});
    let input = write(&dir, "dr.jsonl", &format!("{record}\n"));
    let abbrevs = write(&dir, "abbrev.txt", "mr\nmrs\n");
    let (default_out, custom_out) = (dir.path().join("d.jsonl"), dir.path().join("c.jsonl"));
    ok(&dcsent(&["segment", "--input", p(&input), "--output", p(&default_out)]));
    ok(&dcsent(&["segment", "--input", p(&input), "--output", p(&custom_out), "--abbrev-file", p(&abbrevs)]));
    assert_eq!(jsonl(&default_out)[0]["spans"], case["expected_spans"]);
    assert_eq!(jsonl(&custom_out)[0]["texts"].as_array().unwrap().len(), 3);
}

fn run_clauses(strategy: &str) -> serde_json::Value {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("pred.jsonl");
    ok(&dcsent(&[
        "run",
        "--input",
        p(&fixture("headphones.jsonl")),
        "--scores",
        p(&fixture("headphones_clauses.jsonl")),
        "--strategy",
        strategy,
        "--output",
        p(&output),
    ]));
    jsonl(&output).remove(0)
}

#[test]
fn clause_scores_awon_positive_average_neutral() {
    let awon = run_clauses("awon");
    assert_eq!(awon["label"], 2);
    assert_eq!(awon["strategy"], "awon");
    let average = run_clauses("average");
    assert_eq!(average["label"], 1);
}

#[test]
fn mlp_without_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsent(&[
        "run",
        "--input",
        p(&fixture("headphones.jsonl")),
        "--strategy",
        "mlp",
        "--output",
        p(&dir.path().join("o.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn bad_threshold_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(&dir, "toy.jsonl", TOY);
    let out = dcsent(&["run", "--input", p(&input), "--strategy", "awon", "--threshold", "0", "--output", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

/// Well separated classes: feature 3c is 1 for class c, the rest small noise.
fn separable_features(dir: &TempDir, name: &str, per_class: usize, offset: usize) -> PathBuf {
    let mut rows = Vec::new();
    for c in 0..3 {
        for i in 0..per_class {
            let mut v = [0.0; 19];
            for (j, x) in v.iter_mut().enumerate() {
                *x = (((i + offset) * 31 + j * 17) % 13) as f64 / 100.0;
            }
            v[3 * c] += 1.0;
            rows.push((format!("{name}{c}-{i}"), FeatureVector(v), Sentiment::ALL[c]));
        }
    }
    let path = dir.path().join(format!("{name}.csv"));
    write_feature_csv(&path, rows.iter().map(|(id, f, y)| (id.as_str(), f, *y))).unwrap();
    path
}

#[test]
fn full_grid_writes_125_rows() {
    let dir = tempfile::tempdir().unwrap();
    let train = separable_features(&dir, "train", 10, 0);
    let val = separable_features(&dir, "val", 4, 100);
    let (model, report) = (dir.path().join("m.json"), dir.path().join("grid.csv"));
    let out = dcsent(&[
        "grid",
        "--train",
        p(&train),
        "--val",
        p(&val),
        "--grid",
        "h=16,32,64,128,256;tol=1e-2..1e-6;patience=10..50",
        "--max-epochs",
        "3",
        "--jobs",
        "2",
        "--output",
        p(&model),
        "--report",
        p(&report),
    ]);
    ok(&out);
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().count(), 126);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("best: hidden="));
}

#[test]
fn grid_on_separable_features_reaches_095() {
    let dir = tempfile::tempdir().unwrap();
    let train = separable_features(&dir, "train", 30, 0);
    let val = separable_features(&dir, "val", 10, 100);
    let model = dir.path().join("m.json");
    let out = dcsent(&["grid", "--train", p(&train), "--val", p(&val), "--grid", "h=8,16;tol=1e-3;patience=20", "--output", p(&model)]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let acc: f64 = stdout.split("val_accuracy=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(acc >= 0.95, "{stdout}");
}

#[test]
fn invalid_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = separable_features(&dir, "train", 3, 0);
    let out = dcsent(&["grid", "--train", p(&train), "--val", p(&train), "--grid", "h=0", "--output", p(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = separable_features(&dir, "train", 10, 0);
    let val = separable_features(&dir, "val", 4, 100);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        ok(&dcsent(&["train", "--train", p(&train), "--val", p(&val), "--hidden", "8", "--max-epochs", "20", "--seed", "7", "--output", p(out)]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn featurize_train_run_mlp_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "toy.jsonl", TOY);
    let feats = dir.path().join("f.csv");
    ok(&dcsent(&["featurize", "--input", p(&data), "--output", p(&feats)]));
    let model = dir.path().join("m.json");
    ok(&dcsent(&["train", "--train", p(&feats), "--val", p(&feats), "--hidden", "4", "--max-epochs", "5", "--output", p(&model)]));
    let preds = dir.path().join("p.jsonl");
    ok(&dcsent(&["run", "--input", p(&data), "--strategy", "mlp", "--model", p(&model), "--output", p(&preds)]));
    assert_eq!(jsonl(&preds).len(), 3);
}

#[test]
fn split_partitions_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let body: String = (0..20).map(|i| format!("{{\"id\":\"p{i}\",\"text\":\"t {i}\",\"label\":{}}}\n", i % 3)).collect();
    let data = write(&dir, "d.jsonl", &body);
    let out_dir = dir.path().join("split");
    ok(&dcsent(&["split", "--input", p(&data), "--output", p(&out_dir), "--seed", "1"]));
    let sizes: Vec<usize> = ["train", "validation", "test"].iter().map(|n| jsonl(&out_dir.join(format!("{n}.jsonl"))).len()).collect();
    assert_eq!(sizes, vec![14, 2, 4]);
}

fn eval_fixture(dir: &TempDir, drop_last: bool) -> (PathBuf, PathBuf) {
    let data = write(
        dir,
        "d.jsonl",
        r#"{"id":"a","text":"short one","label":0}
{"id":"b","text":"short two","label":1,"token_count":60}
{"id":"c","text":"short three","label":1,"token_count":120}
{"id":"d","text":"short four","label":2}
"#,
    );
    let labels = [("a", 0), ("b", 1), ("c", 2), ("d", 2)];
    let body: String = labels
        .iter()
        .take(if drop_last { 3 } else { 4 })
        .map(|(id, y)| format!("{{\"passage_id\":\"{id}\",\"strategy\":\"awon\",\"scores\":[0.2,0.3,0.5],\"label\":{y},\"fallback\":false}}\n"))
        .collect();
    (data, write(dir, "pred.jsonl", &body))
}

#[test]
fn eval_reports_accuracy_and_bins() {
    let dir = tempfile::tempdir().unwrap();
    let (data, preds) = eval_fixture(&dir, false);
    let out_dir = dir.path().join("report");
    ok(&dcsent(&["eval", "--input", p(&data), "--predictions", p(&preds), "--output", p(&out_dir), "--bins", "0,50,100", "--svg"]));
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().nth(1).unwrap(), "awon,d,test,4,0.750000,0.777778");
    let binned = std::fs::read_to_string(out_dir.join("binned_awon.csv")).unwrap();
    let lines: Vec<&str> = binned.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,50,2,1.000000"));
    assert!(lines[2].starts_with("50,100,1,1.000000"));
    assert!(lines[3].starts_with("100,inf,1,0.000000"));
    assert!(out_dir.join("binned_awon.json").is_file());
    assert!(std::fs::read_to_string(out_dir.join("binned_awon.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn eval_with_missing_prediction_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (data, preds) = eval_fixture(&dir, true);
    let out = dcsent(&["eval", "--input", p(&data), "--predictions", p(&preds), "--output", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing prediction: d"), "{err}");
    assert!(err.lines().all(|l| l.starts_with("error: ")));
}

#[test]
fn bad_bins_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, preds) = eval_fixture(&dir, false);
    let out = dcsent(&["eval", "--input", p(&data), "--predictions", p(&preds), "--output", p(&dir.path().join("r")), "--bins", "10,5"]);
    assert_eq!(out.status.code(), Some(2));
}
