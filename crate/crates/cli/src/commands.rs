use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use normmark::corpus::{parse_jsonl, split_corpus, Corpus, LabelSet, Vocabulary};
use normmark::evalsuite::{
    ablation_run, confusion, confusion_csv, context_sweep, golds_and_preds, heatmap_export, learned_transitions,
    macro_prf_over, metrics_json, predict_encoded, windows, Evaluation, Splits,
};
use normmark::model::{encode_sequences, Checkpoint};
use normmark::objective::LossReport;
use normmark::synthgen::{empirical_transition_matrix, generate_corpus, mask_labels, GroundTruth, SynthSpec};
use normmark::trainer::{self, EpochRecord, TrainObserver};
use serde_json::json;

use crate::{AblateArgs, CliError, EvalArgs, GenDataArgs, HeatmapArgs, RunConfig, Shared, SweepArgs, TrainArgs};

/// File, then `--set`, then the shared flags, then `extra`.
fn resolve(shared: &Shared, command: &str, extra: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, CliError> {
    let mut cfg = match &shared.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&shared.set)?;
    if let Some(s) = shared.seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(v) = shared.variant {
        cfg.variant = v;
    }
    if let Some(l) = shared.markov_order {
        cfg.model.markov_order = l;
    }
    if let Some(l) = shared.lambda {
        cfg.train.lambda = l;
    }
    if let Some(r) = shared.label_rate {
        cfg.data.label_rate = r;
        cfg.synth.label_rate = r;
    }
    extra(&mut cfg);
    cfg.finish(command)?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Creates the output directory and echoes the resolved config into it.
fn start(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("run_config.json"), &cfg.to_json())
}

fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn excluded(labels: &LabelSet, exclude_none: bool) -> Vec<usize> {
    match labels.index_of("none") {
        Some(i) if exclude_none => vec![i],
        _ => vec![],
    }
}

fn load_labels(cfg: &RunConfig) -> Result<LabelSet, CliError> {
    Ok(LabelSet::load(&cfg.data.resolve(&cfg.data.labels))?)
}

/// Train split after label masking.
fn load_train(cfg: &RunConfig, labels: &LabelSet) -> Result<Corpus, CliError> {
    let corpus = parse_jsonl(&cfg.data.resolve(&cfg.data.train), labels)?;
    if cfg.data.label_rate < 1.0 {
        Ok(mask_labels(&corpus, cfg.data.label_rate, cfg.data.mask_seed)?)
    } else {
        Ok(corpus)
    }
}

fn load_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let labels = load_labels(cfg)?;
    Ok(Splits {
        train: load_train(cfg, &labels)?,
        dev: parse_jsonl(&cfg.data.resolve(&cfg.data.dev), &labels)?,
        test: parse_jsonl(&cfg.data.resolve(&cfg.data.test), &labels)?,
    })
}

/// Prints one line per epoch and keeps the per-step loss log.
#[derive(Default)]
struct Progress {
    steps: String,
    quiet_steps: bool,
}

impl TrainObserver for Progress {
    fn on_step(&mut self, step: u64, report: &LossReport) {
        if !self.quiet_steps {
            self.steps.push_str(&report.log_line(step));
            self.steps.push('\n');
        }
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        println!(
            "epoch {:>3}  loss {:>10.4}  dev f1 {:.4}  dev acc {:.4}  tau {:.3}  {:.1}s",
            r.epoch, r.train.total, r.dev_macro_f1, r.dev_accuracy, r.tau, r.wall_time
        );
    }
}

fn corpus_stats(name: &str, c: &Corpus) -> String {
    let counts: Vec<String> = c
        .class_counts()
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{}={n}", c.labels.name(i)))
        .collect();
    format!(
        "{name}: {} dialogues, {} segments, {} labeled segments (rate {:.3}), per class {}",
        c.dialogues.len(),
        c.segment_count(),
        c.labeled_count(),
        c.labeled_fraction(),
        counts.join(" ")
    )
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.shared, "gen-data", |c| {
        let s = &mut c.synth;
        s.k = a.k.unwrap_or(s.k);
        s.num_dialogues = a.dialogues.unwrap_or(s.num_dialogues);
        s.segments_per_dialogue = a.segments.unwrap_or(s.segments_per_dialogue);
        s.tokens_per_segment = a.tokens.unwrap_or(s.tokens_per_segment);
        s.signal_strength = a.signal.unwrap_or(s.signal_strength);
        s.transition_concentration = a.concentration.unwrap_or(s.transition_concentration);
        s.vocab_size = a.vocab_size.unwrap_or(s.vocab_size);
        s.signature_size = a.signature_size.unwrap_or(s.signature_size);
    })?;
    cfg.synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = &a.shared.out;
    start(out, &cfg)?;

    // Evaluation splits keep every label; only the training split is masked.
    let (masked, truth) = generate_corpus(&cfg.synth)?;
    let (full, _) = generate_corpus(&SynthSpec {
        label_rate: 1.0,
        ..cfg.synth.clone()
    })?;
    let (train, _, _) = split_corpus(&masked, cfg.split.ratios, cfg.split.seed)?;
    let (_, dev, test) = split_corpus(&full, cfg.split.ratios, cfg.split.seed)?;

    masked.write_jsonl(&out.join("corpus.jsonl"))?;
    train.write_jsonl(&out.join("train.jsonl"))?;
    dev.write_jsonl(&out.join("dev.jsonl"))?;
    test.write_jsonl(&out.join("test.jsonl"))?;
    masked.labels.save(&out.join("labels.txt"))?;
    truth.save(&out.join("ground_truth.json"))?;

    println!("{}", corpus_stats("corpus", &masked));
    for (name, c) in [("train", &train), ("dev", &dev), ("test", &test)] {
        println!("{}", corpus_stats(name, c));
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.shared, "train", |c| {
        if let Some(e) = a.epochs {
            c.train.epochs = e;
        }
    })?;
    let out = &a.shared.out;
    start(out, &cfg)?;
    let labels = load_labels(&cfg)?;
    let train = load_train(&cfg, &labels)?;
    let dev = parse_jsonl(&cfg.data.resolve(&cfg.data.dev), &labels)?;
    let test_path = cfg.data.resolve(&cfg.data.test);
    let test = if test_path.exists() {
        Some(parse_jsonl(&test_path, &labels)?)
    } else {
        None
    };
    println!("{}", corpus_stats("train", &train));

    let l = cfg.model.window_length;
    let mut progress = Progress::default();
    let outcome = trainer::train(
        &windows(&train, l),
        &windows(&dev, l),
        &labels,
        &cfg.train,
        &cfg.model,
        &mut progress,
    )?;
    outcome.checkpoint.save(&out.join("checkpoint"))?;
    write(&out.join("history.jsonl"), &outcome.history.to_jsonl())?;
    write(&out.join("loss.jsonl"), &progress.steps)?;

    let exclude = excluded(&labels, cfg.eval.exclude_none);
    let score = |c: &Corpus| -> Result<serde_json::Value, CliError> {
        let e = normmark::evalsuite::evaluate(&outcome.checkpoint, &windows(c, l), &exclude)?;
        Ok(metrics_json(&e.metrics, &labels))
    };
    let dev_metrics = score(&dev)?;
    let test_metrics = test.as_ref().map(&score).transpose()?;
    let metrics = json!({
        "best_epoch": outcome.history.best_epoch,
        "stopped_early": outcome.history.stopped_early,
        "diverged": outcome.diverged,
        "dev": dev_metrics,
        "test": test_metrics,
    });
    write(&out.join("metrics.json"), &pretty(&metrics))?;

    println!(
        "best epoch {}  dev macro F1 {:.4}",
        outcome.history.best_epoch.map_or("-".into(), |e| e.to_string()),
        dev_metrics["macro_f1"].as_f64().unwrap_or(f64::NAN)
    );
    if let Some(t) = &test_metrics {
        print_prf("test", t);
    }
    match outcome.diverged {
        Some(d) => Err(CliError::Diverged(format!("epoch {} step {}: {}", d.epoch, d.step, d.message))),
        None => Ok(()),
    }
}

fn print_prf(name: &str, m: &serde_json::Value) {
    let f = |k: &str| m[k].as_f64().unwrap_or(f64::NAN);
    println!(
        "{name}: macro P {:.4}  R {:.4}  F1 {:.4}",
        f("macro_p"),
        f("macro_r"),
        f("macro_f1")
    );
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.shared, "eval", |c| {
        c.eval.exclude_none |= a.exclude_none;
        if a.checkpoint.is_some() {
            c.eval.checkpoint.clone_from(&a.checkpoint);
        }
        if a.data.is_some() {
            c.eval.data.clone_from(&a.data);
        }
        if a.vocab.is_some() {
            c.eval.vocab.clone_from(&a.vocab);
        }
    })?;
    let ckpt_dir = cfg
        .eval
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Usage("eval needs --checkpoint".into()))?;
    let out = &a.shared.out;
    start(out, &cfg)?;
    let ckpt = Checkpoint::load(&ckpt_dir)?;
    let data_path = cfg.eval.data.clone().unwrap_or_else(|| cfg.data.resolve(&cfg.data.test));
    let corpus = parse_jsonl(&data_path, &ckpt.labels)?;
    let vocab = match &cfg.eval.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => ckpt.vocab.clone(),
    };

    let mc = ckpt.model.config();
    let data = encode_sequences(&windows(&corpus, mc.window_length), &vocab, mc.max_len);
    let preds = predict_encoded(&ckpt.model, &data, &ckpt.meta.vocab_hash)?;
    let (golds, preds) = golds_and_preds(&data, &preds);
    if golds.is_empty() {
        return Err(CliError::Usage(format!("{} has no labeled segments", data_path.display())));
    }
    let k = mc.num_classes;
    let exclude = excluded(&ckpt.labels, cfg.eval.exclude_none);
    let classes: Vec<usize> = (0..k).filter(|c| !exclude.contains(c)).collect();
    let eval = Evaluation {
        metrics: macro_prf_over(&preds, &golds, k, &classes)?,
        confusion: confusion(&preds, &golds, k)?,
    };
    let metrics = metrics_json(&eval.metrics, &ckpt.labels);
    write(&out.join("metrics.json"), &pretty(&metrics))?;
    write(&out.join("confusion.csv"), &confusion_csv(&eval.confusion, &ckpt.labels))?;
    print_prf("eval", &metrics);
    Ok(())
}

fn quiet() -> Progress {
    Progress {
        quiet_steps: true,
        ..Progress::default()
    }
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.shared, "sweep", |c| {
        if let Some(o) = &a.orders {
            c.sweep.orders.clone_from(o);
        }
        if let Some(s) = &a.seeds {
            c.sweep.seeds.clone_from(s);
        }
    })?;
    if cfg.variant.severed() {
        return Err(CliError::Usage(format!(
            "sweep varies the Markov order, which variant `{}` does not have",
            cfg.variant
        )));
    }
    let out = &a.shared.out;
    start(out, &cfg)?;
    let splits = load_splits(&cfg)?;
    let result = context_sweep(
        &splits,
        &cfg.sweep.orders,
        &cfg.model,
        &cfg.train,
        &cfg.sweep.seeds,
        &mut quiet(),
    )?;
    write(&out.join("sweep.csv"), &result.to_csv())?;
    write(
        &out.join("sweep.json"),
        &pretty(&json!({ "peak_order": result.peak_order(), "result": result })),
    )?;
    for e in &result.entries {
        println!("order {}  window {}  median macro F1 {:.4}", e.order, e.window_length, e.summary.macro_f1);
    }
    if let Some(p) = result.peak_order() {
        println!("peak order {p}");
    }
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.shared, "ablate", |c| {
        if let Some(v) = &a.variants {
            c.ablate.variants.clone_from(v);
        }
        if let Some(s) = &a.seeds {
            c.ablate.seeds.clone_from(s);
        }
    })?;
    let out = &a.shared.out;
    start(out, &cfg)?;
    let splits = load_splits(&cfg)?;
    let table = ablation_run(
        &splits,
        &cfg.ablate.variants,
        &cfg.model,
        &cfg.train,
        &cfg.ablate.seeds,
        &mut quiet(),
    )?;
    write(&out.join("ablation.csv"), &table.to_csv())?;
    write(&out.join("ablation.json"), &pretty(&table))?;
    for r in &table.rows {
        println!(
            "{:<14} median macro P {:.4}  R {:.4}  F1 {:.4}",
            r.variant.name(),
            r.summary.macro_p,
            r.summary.macro_r,
            r.summary.macro_f1
        );
    }
    Ok(())
}

pub fn heatmap(a: &HeatmapArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.shared, "heatmap", |c| {
        c.heatmap.from_corpus |= a.from_corpus;
        for (slot, flag) in [
            (&mut c.heatmap.checkpoint, &a.checkpoint),
            (&mut c.heatmap.data, &a.data),
            (&mut c.heatmap.compare, &a.compare),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
    })?;
    let h = &cfg.heatmap;
    let out = &a.shared.out;
    let (labels, matrix) = match (&h.checkpoint, h.from_corpus) {
        (None, true) => {
            start(out, &cfg)?;
            let labels = load_labels(&cfg)?;
            let path: PathBuf = h.data.clone().unwrap_or_else(|| cfg.data.resolve(Path::new("corpus.jsonl")));
            let corpus = parse_jsonl(&path, &labels)?;
            let emp = empirical_transition_matrix(&corpus)?;
            for &r in &emp.empty_rows {
                eprintln!("warning: no transitions out of `{}`; row reported as uniform", labels.name(r));
            }
            (labels, emp.matrix)
        }
        (Some(dir), false) => {
            start(out, &cfg)?;
            let ckpt = Checkpoint::load(dir)?;
            let m = learned_transitions(&ckpt.model)?;
            (ckpt.labels, m)
        }
        _ => {
            return Err(CliError::Usage(
                "heatmap needs exactly one of --from-corpus or --checkpoint".into(),
            ))
        }
    };
    heatmap_export(&matrix, &labels, &out.join("heatmap.csv"))?;
    println!("wrote {}", out.join("heatmap.csv").display());

    if let Some(path) = &h.compare {
        let truth = GroundTruth::load(path)?;
        if truth.transition.k() != matrix.k() {
            return Err(CliError::Usage(format!(
                "ground truth has {} labels, heatmap has {}",
                truth.transition.k(),
                matrix.k()
            )));
        }
        let tv = matrix.row_total_variation(&truth.transition);
        let mut report = String::new();
        for (i, t) in tv.iter().enumerate() {
            let _ = writeln!(report, "row {}: total variation {t:.4}", labels.name(i));
        }
        print!("{report}");
        let max = tv.iter().copied().fold(0.0, f64::max);
        println!("max row total variation {max:.4}");
        write(
            &out.join("heatmap_compare.json"),
            &pretty(&json!({ "row_total_variation": tv, "max": max })),
        )?;
    }
    Ok(())
}
