use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
data.dir = data
synth.num_dialogues = 60
synth.tokens_per_segment = 3
synth.seed = 133
model.encoder = bag
model.d_z = 2
model.d_h = 8
model.d_emb = 8
model.decoder_hidden = 8
model.max_len = 12
model.window_length = 4
train.lr_encoder = 1e-3
train.epochs = 2
train.enumerate = true
";

fn normmark(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normmark"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = normmark(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Temp dir holding `tiny.conf` and a generated corpus under `data/`.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
    ok(dir.path(), &["gen-data", "--config", "tiny.conf", "--out", "data"]);
    dir
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn json(dir: &Path, rel: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, rel)).unwrap()
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out in ["a", "b"] {
        ok(p, &["gen-data", "--k", "4", "--dialogues", "200", "--seed", "1", "--out", out]);
    }
    for f in ["corpus.jsonl", "train.jsonl", "dev.jsonl", "test.jsonl", "labels.txt", "ground_truth.json"] {
        assert_eq!(read(p, &format!("a/{f}")), read(p, &format!("b/{f}")), "{f}");
    }
}

#[test]
fn gen_data_reports_label_rate_and_rejects_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gen-data", "--dialogues", "20", "--label-rate", "0", "--out", "z"]);
    assert!(stdout.starts_with("corpus: 20 dialogues, 200 segments, 0 labeled segments"), "{stdout}");
    let bad = normmark(dir.path(), &["gen-data", "--k", "1", "--out", "k1"]);
    assert_eq!(bad.status.code(), Some(2));
    let unknown = normmark(dir.path(), &["gen-data", "--no-such-flag"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_records_variant() {
    let ws = workspace();
    let p = ws.path();
    ok(p, &["train", "--config", "tiny.conf", "--variant", "zero", "--out", "run"]);
    for f in ["checkpoint/meta.json", "history.jsonl", "loss.jsonl", "metrics.json", "run_config.json"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }
    let cfg = json(p, "run/run_config.json");
    assert_eq!(cfg["variant"], "zero");
    assert_eq!(cfg["command"], "train");
    assert_eq!(cfg["model"]["markov_order"], 0);
    assert_eq!(read(p, "run/history.jsonl").lines().count(), 2);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let ws = workspace();
    let p = ws.path();
    ok(p, &["train", "--config", "tiny.conf", "--seed", "4", "--out", "first"]);
    ok(p, &["train", "--config", "first/run_config.json", "--out", "second"]);
    assert_eq!(read(p, "first/run_config.json"), read(p, "second/run_config.json"));
    assert_eq!(read(p, "first/history.jsonl"), read(p, "second/history.jsonl"));
    assert_eq!(read(p, "first/metrics.json"), read(p, "second/metrics.json"));
}

#[test]
fn training_does_not_touch_its_inputs() {
    let ws = workspace();
    let p = ws.path();
    let before: Vec<String> = ["train", "dev", "test"].iter().map(|s| read(p, &format!("data/{s}.jsonl"))).collect();
    ok(p, &["train", "--config", "tiny.conf", "--label-rate", "0.5", "--out", "run"]);
    let after: Vec<String> = ["train", "dev", "test"].iter().map(|s| read(p, &format!("data/{s}.jsonl"))).collect();
    assert_eq!(before, after);
}

#[test]
fn missing_inputs_and_bad_keys_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.conf"), TINY).unwrap();
    let out = normmark(p, &["train", "--config", "tiny.conf", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels.txt"));
    let out = normmark(p, &["train", "--config", "tiny.conf", "--set", "model.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = normmark(p, &["train", "--config", "missing.conf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let ws = workspace();
    let p = ws.path();
    let out = normmark(
        p,
        &["train", "--config", "tiny.conf", "--set", "train.lr_rest=1e300", "--set", "train.grad_clip_norm=1e300", "--out", "run"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("run/checkpoint/meta.json").exists());
    assert!(!json(p, "run/metrics.json")["diverged"].is_null());
}

#[test]
fn eval_is_repeatable_and_exclusion_only_changes_averages() {
    let ws = workspace();
    let p = ws.path();
    ok(p, &["train", "--config", "tiny.conf", "--out", "run"]);
    let stdout = ok(p, &["eval", "--config", "tiny.conf", "--checkpoint", "run/checkpoint", "--out", "e1"]);
    assert!(stdout.contains("macro P"));
    ok(p, &["eval", "--config", "tiny.conf", "--checkpoint", "run/checkpoint", "--out", "e2"]);
    assert_eq!(read(p, "e1/metrics.json"), read(p, "e2/metrics.json"));
    assert_eq!(read(p, "e1/confusion.csv"), read(p, "e2/confusion.csv"));

    ok(
        p,
        &["eval", "--config", "tiny.conf", "--checkpoint", "run/checkpoint", "--exclude-none", "--out", "e3"],
    );
    let (all, some) = (json(p, "e1/metrics.json"), json(p, "e3/metrics.json"));
    assert_eq!(all["per_class"], some["per_class"]);
    assert_eq!(all["averaged_over"].as_array().unwrap().len(), 4);
    assert_eq!(some["averaged_over"].as_array().unwrap().len(), 3);
    assert!(!some["averaged_over"].as_array().unwrap().contains(&"none".into()));
}

#[test]
fn eval_rejects_a_foreign_vocabulary() {
    let ws = workspace();
    let p = ws.path();
    ok(p, &["train", "--config", "tiny.conf", "--out", "run"]);
    fs::write(p.join("other.json"), "[\"<pad>\", \"<unk>\", \"<bos>\", \"<eos>\", \"<z>\", \"<c>\", \"w0\"]").unwrap();
    let out = normmark(
        p,
        &["eval", "--config", "tiny.conf", "--checkpoint", "run/checkpoint", "--vocab", "other.json", "--out", "e"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
    let out = normmark(p, &["eval", "--config", "tiny.conf", "--out", "e"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn separable_task_is_learned_to_high_f1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.conf"), TINY).unwrap();
    let sep = ["--signal", "1.0", "--tokens", "4"];
    let mut args = vec!["gen-data", "--config", "tiny.conf", "--out", "data"];
    args.extend(sep);
    ok(p, &args);
    ok(
        p,
        &[
            "train", "--config", "tiny.conf", "--epochs", "30", "--set", "train.lr_rest=1e-2", "--set",
            "train.lr_encoder=1e-2", "--out", "run",
        ],
    );
    ok(
        p,
        &["eval", "--config", "tiny.conf", "--checkpoint", "run/checkpoint", "--data", "data/train.jsonl", "--out", "e"],
    );
    let f1 = json(p, "e/metrics.json")["macro_f1"].as_f64().unwrap();
    assert!(f1 >= 0.95, "train macro F1 {f1}");
}

#[test]
fn heatmap_from_corpus_matches_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-data", "--dialogues", "400", "--seed", "133", "--out", "data"]);
    let stdout = ok(
        p,
        &["heatmap", "--from-corpus", "--set", "data.dir=data", "--compare", "data/ground_truth.json", "--out", "h"],
    );
    assert!(stdout.contains("max row total variation"));
    let max = json(p, "h/heatmap_compare.json")["max"].as_f64().unwrap();
    assert!(max <= 0.05, "max TV {max}");
    let csv = read(p, "h/heatmap.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "previous,none,Apology,Criticism,Greeting");
    for line in lines {
        let sum: f64 = line.split(',').skip(1).map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let both = normmark(p, &["heatmap", "--out", "h2"]);
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn heatmap_from_checkpoint() {
    let ws = workspace();
    let p = ws.path();
    ok(p, &["train", "--config", "tiny.conf", "--out", "run"]);
    ok(p, &["heatmap", "--checkpoint", "run/checkpoint", "--out", "h"]);
    assert_eq!(read(p, "h/heatmap.csv").lines().count(), 5);
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweep_writes_one_row_per_order() {
    let ws = workspace();
    let p = ws.path();
    let stdout = ok(
        p,
        &["sweep", "--config", "tiny.conf", "--orders", "1,2,3", "--seeds", "1", "--set", "train.epochs=1", "--out", "s"],
    );
    assert!(stdout.contains("peak order"));
    let rows = csv_rows(&read(p, "s/sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][0], "order");
    for (i, r) in rows[1..].iter().enumerate() {
        assert_eq!(r[0], (i + 1).to_string());
        assert!(r[4].parse::<f64>().unwrap().is_finite());
    }
    let bad = normmark(p, &["sweep", "--config", "tiny.conf", "--variant", "zero", "--out", "s2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ablate_writes_one_row_per_variant_with_median() {
    let ws = workspace();
    let p = ws.path();
    ok(
        p,
        &[
            "ablate", "--config", "tiny.conf", "--variants", "normmark,zero", "--seeds", "1,2,3", "--set",
            "train.epochs=1", "--out", "a",
        ],
    );
    let rows = csv_rows(&read(p, "a/ablation.csv"));
    assert_eq!(rows.len(), 3);
    let median_col = rows[0].iter().position(|h| h == "median_macro_f1").unwrap();
    assert_eq!(rows[1][0], "normmark");
    assert_eq!(rows[2][0], "zero");
    for r in &rows[1..] {
        let seeds: Vec<f64> = r[median_col + 1].split(' ').map(|s| s.parse().unwrap()).collect();
        let mut sorted = seeds.clone();
        sorted.sort_by(f64::total_cmp);
        let median: f64 = r[median_col].parse().unwrap();
        assert_eq!(seeds.len(), 3);
        assert!((median - sorted[1]).abs() < 1e-6);
    }
}
