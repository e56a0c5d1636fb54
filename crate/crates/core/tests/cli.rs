use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn infosel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infosel"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = infosel(dir, &full);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_of(out: &Output) -> (i32, String) {
    let err: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)));
    (out.status.code().unwrap(), err["error"]["code"].as_str().unwrap().to_string())
}

fn fixture(dir: &Path) {
    ok_json(dir, &["gen-fixture", "--kind", "ood", "--n-classes", "2", "--dim", "3", "--per-class", "50", "--test-per-class", "20", "--out-dir", "fx"]);
}

#[test]
fn missing_logits_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    let out = infosel(d.path(), &["score", "--in", "fx/train.emb1", "--indicator", "entropy", "--out", "s.csv"]);
    assert_eq!(error_of(&out), (2, "MISSING_LOGITS".into()));
    assert!(!d.path().join("s.csv").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let out = infosel(d.path(), &["score", "--in", "nope.emb1", "--out", "s.csv"]);
    assert_eq!(error_of(&out), (3, "IO_ERROR".into()));
}

#[test]
fn corrupt_table_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    let path = d.path().join("fx/train.emb1");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[100] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    let out = infosel(d.path(), &["score", "--in", "fx/train.emb1", "--out", "s.csv"]);
    assert_eq!(error_of(&out), (2, "CHECKSUM_MISMATCH".into()));
}

#[test]
fn split_rejects_out_of_range_fractions() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    for f in ["0", "1", "-0.5", "1.5"] {
        let fraction = format!("--fraction={f}");
        let out = infosel(d.path(), &["split", "--train", "fx/train.emb1", "--test", "fx/test.emb1", &fraction, "--out-dir", "sp"]);
        assert_eq!(error_of(&out).0, 2, "fraction {f}");
    }
}

#[test]
fn split_writes_partition_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    let summary = ok_json(d.path(), &["split", "--train", "fx/train.emb1", "--test", "fx/test.emb1", "--out-dir", "sp"]);
    assert_eq!(summary["positive"], 40);
    assert_eq!(summary["negative"], 60);
    let manifest: Value = serde_json::from_slice(&std::fs::read(d.path().join("sp/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["run_config"]["fraction"], 0.4);
    assert_eq!(manifest["parameters"]["per_class"], true);
    let pos = infosel::EmbeddingTable::load(&d.path().join("sp/positive.emb1")).unwrap();
    assert_eq!(pos.class_counts(), vec![20, 20]);
}

#[test]
fn reduction_shrinks_to_the_last_round() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    let summary = ok_json(
        d.path(),
        &["simulate", "reduce", "--train", "fx/train.emb1", "--eval", "fx/test.emb1", "--budget", "10", "--rounds", "9", "--epochs", "20", "--out-dir", "sim"],
    );
    for arm in ["hid", "lid", "random"] {
        let sizes: Vec<u64> = summary["arms"][arm]["sizes"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        assert_eq!(sizes, (0..10).map(|r| 100 - 10 * r).collect::<Vec<_>>(), "{arm}");
        let csv = std::fs::read_to_string(d.path().join(format!("sim/{arm}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# {"));
        assert_eq!(lines.next().unwrap(), "round,size,accuracy");
        assert_eq!(lines.count(), 10);
    }
}

#[test]
fn oversized_reduction_fails_at_runtime() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    let out = infosel(
        d.path(),
        &["simulate", "reduce", "--train", "fx/train.emb1", "--eval", "fx/test.emb1", "--budget", "20", "--rounds", "9", "--out-dir", "sim"],
    );
    assert_eq!(error_of(&out).0, 4);
}

#[test]
fn eval_reports_every_seed() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    let report = ok_json(d.path(), &["eval", "--train", "fx/train.emb1", "--test", "fx/test.emb1", "--seeds", "1,2,3"]);
    let accs = report["accuracies"].as_array().unwrap();
    assert_eq!(accs.len(), 3);
    let mean = accs.iter().map(|a| a.as_f64().unwrap()).sum::<f64>() / 3.0;
    assert!((report["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(report["std"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["version"], infosel::VERSION);
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    ok_json(d.path(), &["score", "--in", "fx/train.emb1", "--indicator", "metric", "--out", "s.csv"]);
    std::fs::write(d.path().join("cfg.json"), r#"{"scores": "s.csv", "budget": 6, "direction": "badset", "out": "plan.json"}"#).unwrap();
    let from_file = ok_json(d.path(), &["select", "--config", "cfg.json"]);
    assert_eq!(from_file["plan"]["selected_ids"].as_array().unwrap().len(), 6);
    assert_eq!(from_file["plan"]["direction"], "badset");
    let overridden = ok_json(d.path(), &["select", "--config", "cfg.json", "--budget", "4"]);
    assert_eq!(overridden["plan"]["selected_ids"].as_array().unwrap().len(), 4);
    assert_eq!(overridden["plan"]["direction"], "badset");

    let out = infosel(d.path(), &["eval", "--config", "plan.json"]);
    assert_eq!(error_of(&out).0, 2);
    std::fs::write(d.path().join("typo.json"), r#"{"scores": "s.csv", "budjet": 6}"#).unwrap();
    assert_eq!(error_of(&infosel(d.path(), &["select", "--config", "typo.json"])).0, 2);
}

#[test]
fn select_beyond_pool_reports_insufficient_pool() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    ok_json(d.path(), &["score", "--in", "fx/train.emb1", "--out", "s.csv"]);
    let out = infosel(d.path(), &["select", "--scores", "s.csv", "--budget", "101", "--out", "p.json"]);
    assert_eq!(error_of(&out), (2, "INSUFFICIENT_POOL".into()));
}

#[test]
fn csv_and_emb1_convert_losslessly() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    ok_json(d.path(), &["convert", "--in", "fx/test.emb1", "--out", "t.csv"]);
    ok_json(d.path(), &["convert", "--in", "t.csv", "--out", "t.emb1"]);
    let a = infosel::EmbeddingTable::load(&d.path().join("fx/test.emb1")).unwrap();
    let b = infosel::EmbeddingTable::load(&d.path().join("t.emb1")).unwrap();
    assert_eq!(a.sample_ids(), b.sample_ids());
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.features(), b.features());
}

#[test]
fn stats_lists_every_class() {
    let d = tempfile::tempdir().unwrap();
    fixture(d.path());
    ok_json(d.path(), &["score", "--in", "fx/train.emb1", "--out", "s.csv"]);
    let report = ok_json(d.path(), &["stats", "--scores", "s.csv"]);
    let classes = report["class_stats"]["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 2);
    assert_eq!(classes[0]["count"], 50);
    let text = infosel(d.path(), &["stats", "--scores", "s.csv"]);
    assert!(String::from_utf8(text.stdout).unwrap().starts_with("class"));
}

#[test]
fn bad_usage_exits_with_validation_code() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(error_of(&infosel(d.path(), &["score", "--budget", "3"])), (2, "USAGE".into()));
    assert_eq!(error_of(&infosel(d.path(), &["frobnicate"])), (2, "USAGE".into()));
    let help = infosel(d.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8(help.stdout).unwrap().contains("simulate"));
}
