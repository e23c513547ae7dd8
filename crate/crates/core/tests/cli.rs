use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hstf::capture::write_capture;
use hstf::features::read_encoded_dataset_file;
use hstf::http::read_ndjson_file;
use hstf::model::{load_model, HstfConfig, HstfModel};
use tempfile::TempDir;

fn hstf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hstf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Small corpus plus a tiny one-epoch config in a fresh directory.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = hstf(dir.path(), &["gen", "--benign", "200", "--malicious", "60", "--seed", "4", "-q", "-o", "flows.ndjson"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = HstfConfig {
        epochs: 1,
        batch_size: 16,
        ..HstfConfig::tiny()
    };
    fs::write(dir.path().join("tiny.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    dir
}

#[test]
fn help_exits_zero_and_unknown_flag_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = hstf(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    for sub in ["ingest", "gen", "extract", "train", "eval", "predict", "sweep", "imbalance"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
        assert_eq!(code(&hstf(dir.path(), &[sub, "--help"])), 0);
    }
    assert_eq!(code(&hstf(dir.path(), &["gen", "--frobnicate"])), 1);
    assert_eq!(code(&hstf(dir.path(), &["teleport"])), 1);
}

#[test]
fn ingest_empty_capture_gives_no_flows() {
    let dir = tempfile::tempdir().unwrap();
    write_capture(dir.path().join("empty.pcap"), &[]).unwrap();
    let o = hstf(dir.path(), &["ingest", "empty.pcap"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).is_empty());
}

#[test]
fn ingest_bad_magic_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.pcap"), b"this is not a capture file at all").unwrap();
    let o = hstf(dir.path(), &["ingest", "bad.pcap"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn generated_capture_of_five_connections_ingests_to_five_flows() {
    let dir = tempfile::tempdir().unwrap();
    let o = hstf(
        dir.path(),
        &["gen", "--benign", "3", "--malicious", "2", "--seed", "9", "--pcap", "five.pcap", "-q", "-o", "gen.ndjson"],
    );
    assert_eq!(code(&o), 0);
    let o = hstf(dir.path(), &["ingest", "five.pcap", "-o", "back.ndjson"]);
    assert_eq!(code(&o), 0);
    let generated = read_ndjson_file(dir.path().join("gen.ndjson")).unwrap();
    let mut back = read_ndjson_file(dir.path().join("back.ndjson")).unwrap();
    assert_eq!(back.len(), 5);
    back.sort_by(|a, b| a.flow_id.cmp(&b.flow_id));
    let mut generated_sorted = generated.clone();
    generated_sorted.sort_by(|a, b| a.flow_id.cmp(&b.flow_id));
    for (a, b) in back.iter().zip(&generated_sorted) {
        assert_eq!(a.flow_id, b.flow_id);
        assert_eq!(a.messages, b.messages);
    }
}

#[test]
fn gen_is_reproducible_and_records_seed_and_profile_hash() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.ndjson", "b.ndjson"] {
        assert_eq!(code(&hstf(dir.path(), &["gen", "--benign", "20", "--malicious", "5", "--seed", "11", "-q", "-o", out])), 0);
    }
    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a.ndjson"), read("b.ndjson"));
    assert_eq!(read("a.ndjson.manifest.json"), read("b.ndjson.manifest.json"));
    let manifest: serde_json::Value = serde_json::from_slice(&read("a.ndjson.manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["profile_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["flows"].as_array().unwrap().len(), 25);
}

#[test]
fn gen_with_zero_counts_writes_header_only_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = hstf(dir.path(), &["gen", "--benign", "0", "--malicious", "0", "-q", "-o", "none.ndjson"]);
    assert_eq!(code(&o), 0);
    assert!(fs::read(dir.path().join("none.ndjson")).unwrap().is_empty());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("none.ndjson.manifest.json")).unwrap()).unwrap();
    assert!(manifest["flows"].as_array().unwrap().is_empty());
    assert!(manifest["profile_sha256"].is_string());
}

#[test]
fn gen_with_bad_profile_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), r#"{"benign": {"variants": []}}"#).unwrap();
    assert_eq!(code(&hstf(dir.path(), &["gen", "--profiles", "p.json", "-q"])), 2);
}

#[test]
fn extract_writes_one_record_per_flow() {
    let dir = workspace();
    let o = hstf(dir.path(), &["--flow-size", "3", "extract", "flows.ndjson", "-q", "-o", "flows.bin"]);
    assert_eq!(code(&o), 0);
    let (flow_size, flows) = read_encoded_dataset_file(dir.path().join("flows.bin")).unwrap();
    assert_eq!(flow_size, 3);
    assert_eq!(flows.len(), 260);
}

#[test]
fn train_with_zero_epochs_saves_initial_weights() {
    let dir = workspace();
    let o = hstf(
        dir.path(),
        &["--config", "tiny.json", "--seed", "6", "train", "flows.ndjson", "--epochs", "0", "-q", "-o", "m.model"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let saved = load_model(dir.path().join("m.model")).unwrap();
    let init = HstfModel::new(saved.config.clone()).unwrap();
    assert_eq!(saved.config.seed, 6);
    assert_eq!(saved.params, init.params);
    let history = fs::read_to_string(dir.path().join("m.model.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn train_prints_metrics_and_rejects_single_class() {
    let dir = workspace();
    let o = hstf(dir.path(), &["--config", "tiny.json", "train", "flows.ndjson", "-q", "-o", "m.model"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("f1="));
    let flows = read_ndjson_file(dir.path().join("flows.ndjson")).unwrap();
    let benign: Vec<_> = flows.into_iter().filter(|f| f.label == hstf::http::Label::Benign).collect();
    hstf::http::write_ndjson_file(dir.path().join("benign.ndjson"), &benign).unwrap();
    let o = hstf(dir.path(), &["--config", "tiny.json", "train", "benign.ndjson", "-q", "-o", "b.model"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn eval_predict_and_config_mismatch() {
    let dir = workspace();
    assert_eq!(code(&hstf(dir.path(), &["--config", "tiny.json", "train", "flows.ndjson", "-q", "-o", "m.model"])), 0);

    let o = hstf(dir.path(), &["eval", "m.model", "flows.ndjson"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "flows,tp,fp,tn,fn,precision,recall,f1");
    assert_eq!(lines[1].split(',').next(), Some("260"));

    let o = hstf(dir.path(), &["--flow-size", "4", "eval", "m.model", "flows.ndjson"]);
    assert_eq!(code(&o), 5);

    let labels_at = |threshold: &str| {
        let o = hstf(dir.path(), &["predict", "m.model", "flows.ndjson", "--threshold", threshold]);
        assert_eq!(code(&o), 0);
        stdout(&o)
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect::<Vec<_>>()
    };
    let all = labels_at("0");
    assert_eq!(all.len(), 260);
    assert!(all.iter().all(|l| l == "malicious"));
    assert!(labels_at("1").iter().all(|l| l == "benign"));
}

#[test]
fn sweep_rows_match_values_and_imbalance_writes_curves() {
    let dir = workspace();
    let o = hstf(
        dir.path(),
        &["--config", "tiny.json", "--repeats", "1", "sweep", "flows.ndjson", "--axis", "packet-size", "--values", "100,400", "-q"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("packet_size,precision,recall,f1,train_time_s,test_time_s"));

    let o = hstf(
        dir.path(),
        &[
            "--config",
            "tiny.json",
            "--repeats",
            "1",
            "imbalance",
            "flows.ndjson",
            "--proportions",
            "3:10,1:24",
            "--epochs",
            "2",
            "-q",
            "-o",
            "imb.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("imb.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let curves = fs::read_to_string(dir.path().join("imb.csv.curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 2);
}

#[test]
fn unwritable_output_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = hstf(dir.path(), &["gen", "--benign", "1", "--malicious", "1", "-q", "-o", "missing/dir/x.ndjson"]);
    assert_eq!(code(&o), 3);
}
