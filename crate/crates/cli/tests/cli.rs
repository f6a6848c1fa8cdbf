use std::path::{Path, PathBuf};
use std::process::Command;

use cash_core::encoder::{BackboneConfig, EncoderConfig};
use cash_core::experiment::simulate_bank;
use cash_core::model::{CashModel, ModelConfig, ModelMode};
use cash_core::signal::{profile_bank_in, split_dataset, ProfileRanges, SeenSelection, SplitConfig, SplitMode};
use cash_core::trainer::{train, Phase, TrainConfig};
use serde_json::{json, Value};

fn cash(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cash")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = cash(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        backbone: BackboneConfig::DeskSmall { channels: [3, 4, 4], kernel: 3, stride: 2 },
        input_length: 16,
        embedding_dim: 6,
        enhancer_hidden: 5,
        enhancer_dim: 4,
        normalize_enhanced: true,
        temperature: 0.5,
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        step1: vec![Phase::adam(1e-3, 2)],
        step2: Some(vec![Phase::adam(1e-3, 1)]),
        batch_size: 8,
        fsl_pretrain: vec![Phase::adam(1e-3, 1)],
        fsl_finetune: vec![Phase::adam(1e-3, 1)],
        ..TrainConfig::desk()
    }
}

/// Four simulated emitters of 10 short captures each, two of them seen.
fn tiny_config() -> Value {
    json!({
        "data": {"kind": "simulated", "profiles": 4, "per_class": 10, "signal_length": 24, "snr_db": 20.0, "bank_seed": 5},
        "split": {"seen": {"count": 2}, "shots_per_novel": 2, "test_per_class": 3},
        "encoder": tiny_encoder(),
        "code_length": 4,
        "train": tiny_train(),
        "trials": 2
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_counts_records_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(dir.path(), "empty.json", &json!({"data": {"kind": "simulated", "profiles": 0}}));
    ok(&["simulate", "--config", s(&empty), "--out", s(&dir.path().join("e"))]);
    let m = read_json(&dir.path().join("e/dataset/manifest.json"));
    assert_eq!(m["records"].as_array().unwrap().len(), 0);

    let cfg = write_config(
        dir.path(),
        "ten.json",
        &json!({"data": {"kind": "simulated", "profiles": 10, "per_class": 300, "signal_length": 8}}),
    );
    for run in ["a", "b"] {
        ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join(run)), "--seed", "3"]);
    }
    let a = dir.path().join("a/dataset");
    let m = read_json(&a.join("manifest.json"));
    let records = m["records"].as_array().unwrap();
    assert_eq!(records.len(), 3000);
    for r in records.iter().step_by(97).chain([&records[0], &records[2999]]) {
        let file = r["file"].as_str().unwrap();
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(dir.path().join("b/dataset").join(file)).unwrap()
        );
    }
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(dir.path().join("b/dataset/manifest.json")).unwrap()
    );
    assert_eq!(read_json(&dir.path().join("a/run.json"))["status"], "complete");
}

#[test]
fn train_is_deterministic_and_records_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    for run in ["a", "b"] {
        ok(&["train", "--config", s(&cfg), "--out", s(&dir.path().join(run)), "--seed", "7"]);
    }
    let strip = |p: PathBuf| -> Vec<Value> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_seconds");
                v
            })
            .collect()
    };
    let la = strip(dir.path().join("a/train_log.jsonl"));
    assert!(!la.is_empty());
    assert_eq!(la, strip(dir.path().join("b/train_log.jsonl")));
    assert_eq!(read_json(&dir.path().join("a/model.json")), read_json(&dir.path().join("b/model.json")));
    let run = read_json(&dir.path().join("a/run.json"));
    assert_eq!(run["seed"], 7);
    assert_eq!(run["config"]["train"]["seed"], 7);
    assert!(std::fs::metadata(dir.path().join("a/loss.svg")).unwrap().len() > 0);
}

#[test]
fn adsb_preset_is_stamped_into_the_run_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c["preset"] = json!("adsb");
    c.as_object_mut().unwrap().remove("train");
    c["data"]["per_class"] = json!(4);
    c["split"]["test_per_class"] = json!(1);
    let cfg = write_config(dir.path(), "c.json", &c);
    ok(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("r"))]);
    let train = &read_json(&dir.path().join("r/run.json"))["config"]["train"];
    assert_eq!(train["alpha"], 0.1);
    assert_eq!(train["beta"], 100.0);
}

#[test]
fn no_identifier_flag_matches_a_directly_built_vanilla_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    ok(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("v")), "--seed", "4", "--no-identifier"]);
    let from_cli = CashModel::load(dir.path().join("v/model.json")).unwrap();
    assert_eq!(from_cli.mode(), ModelMode::Vanilla);
    assert!(from_cli.identifier.is_none());

    let bank = profile_bank_in(4, &ProfileRanges::separated(), 5);
    let ds = simulate_bank(&bank, 10, 24, 20.0, 4).unwrap();
    let split = split_dataset(
        &ds,
        &SplitConfig {
            mode: SplitMode::Gzsl,
            seen: SeenSelection::Count(2),
            shots_per_novel: 0,
            test_per_class: 3,
            seed: 4,
        },
    )
    .unwrap();
    let mc = ModelConfig::new(ModelMode::Vanilla, tiny_encoder(), 4, split.seen.iter().copied().collect());
    let mut direct = CashModel::new(mc, 4).unwrap();
    train(&mut direct, &split.train, &TrainConfig { seed: 4, ..tiny_train() }).unwrap();
    assert_eq!(from_cli, direct);
}

#[test]
fn infer_replays_and_resumes_from_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    ok(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("t"))]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("stream")), "--seed", "11"]);
    let empty = write_config(dir.path(), "empty.json", &json!({"data": {"kind": "simulated", "profiles": 0}}));
    ok(&["simulate", "--config", s(&empty), "--out", s(&dir.path().join("nothing"))]);
    let model = dir.path().join("t/model.json");
    let stream = dir.path().join("stream/dataset/manifest.json");

    ok(&[
        "infer",
        "--model",
        s(&model),
        "--input",
        s(&dir.path().join("nothing/dataset/manifest.json")),
        "--out",
        s(&dir.path().join("i0")),
    ]);
    assert!(std::fs::read_to_string(dir.path().join("i0/labels.jsonl")).unwrap().is_empty());

    for run in ["i1", "i2"] {
        ok(&["infer", "--model", s(&model), "--input", s(&stream), "--out", s(&dir.path().join(run))]);
    }
    let labels = |run: &str| std::fs::read_to_string(dir.path().join(run).join("labels.jsonl")).unwrap();
    assert_eq!(labels("i1").lines().count(), 40);
    assert_eq!(labels("i1"), labels("i2"));

    let table = dir.path().join("i1/table.json");
    ok(&[
        "infer",
        "--model",
        s(&model),
        "--input",
        s(&stream),
        "--table",
        s(&table),
        "--out",
        s(&dir.path().join("i3")),
    ]);
    assert_eq!(labels("i1"), labels("i3"));
    assert_eq!(std::fs::read(&table).unwrap(), std::fs::read(dir.path().join("i3/table.json")).unwrap());
}

#[test]
fn evaluate_writes_one_row_per_trial_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c["trials"] = json!(10);
    let cfg = write_config(dir.path(), "c.json", &c);
    let out = dir.path().join("e");
    ok(&["evaluate", "--config", s(&cfg), "--out", s(&out), "--jobs", "2"]);
    for crit in ["task_aware", "task_agnostic"] {
        let text = std::fs::read_to_string(out.join(format!("trials_{crit}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 11, "{crit}");
        assert!(out.join(format!("summary_{crit}.json")).exists());
    }
    assert!(std::fs::metadata(out.join("accuracy.svg")).unwrap().len() > 0);

    let serial = dir.path().join("serial");
    ok(&["evaluate", "--config", s(&cfg), "--out", s(&serial)]);
    let strip = |p: PathBuf| -> Vec<String> {
        let mut r = csv::Reader::from_path(p).unwrap();
        let wall = r.headers().unwrap().iter().position(|h| h == "wall_seconds").unwrap();
        r.records()
            .map(|rec| {
                rec.unwrap()
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != wall)
                    .map(|(_, v)| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    assert_eq!(strip(out.join("trials_task_aware.csv")), strip(serial.join("trials_task_aware.csv")));

    let plots = dir.path().join("p");
    ok(&["plot", "--input", s(&out.join("trials_task_agnostic.csv")), "--out", s(&plots)]);
    assert!(std::fs::metadata(plots.join("trials_task_agnostic.svg")).unwrap().len() > 0);
}

#[test]
fn code_length_sweep_emits_one_aggregate_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c["trials"] = json!(1);
    c["sweep"] = json!({"axis": "code_length", "values": [2, 4, 8, 12]});
    let cfg = write_config(dir.path(), "c.json", &c);
    let out = dir.path().join("s");
    ok(&["sweep", "--config", s(&cfg), "--out", s(&out), "--jobs", "2"]);
    let summary = read_json(&out.join("summary_task_aware.json"));
    assert_eq!(summary.as_array().unwrap().len(), 4);
    assert!(std::fs::metadata(out.join("sweep_task_aware.svg")).unwrap().len() > 0);
}

#[test]
fn few_shot_training_runs_from_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    ok(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("f")), "--fsl"]);
    let m = CashModel::load(dir.path().join("f/model.json")).unwrap();
    assert_eq!(m.mode(), ModelMode::Fsl);
}

#[test]
fn errors_exit_nonzero_and_flag_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"data": {"kind": "manifest", "path": "/nonexistent/manifest.json"}}),
    );
    let out = dir.path().join("r");
    let res = cash(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!res.status.success());
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["status"], "partial");
    assert!(run["error"].as_str().unwrap().contains("nonexistent"));

    let bad = write_config(dir.path(), "bad.json", &json!({"unknown_field": 1}));
    assert!(!cash(&["train", "--config", s(&bad), "--out", s(&out)]).status.success());
    assert!(!cash(&["train", "--out", s(&out), "--fsl", "--no-identifier"]).status.success());
}
