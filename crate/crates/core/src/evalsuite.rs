//! Prediction, macro-averaged metrics, confusion matrices, transition
//! heatmaps, and the sweep and ablation harnesses.
//!
//! Zero-denominator convention: a class with no predictions has precision 0,
//! a class with no gold segments has recall 0, and F1 is 0 whenever
//! `P + R = 0`. Macro averages are unweighted means over the chosen classes
//! (all `K` by default), so absent classes pull the average down.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{window_dialogues, Corpus, LabelSet, NormLabel, SegmentSequence, WindowConfig};
use crate::error::{Error, Result};
use crate::model::{encode_sequences, Checkpoint, EncodedCorpus, Model, ModelConfig, Variant};
use crate::synthgen::TransitionMatrix;
use crate::trainer::{train, DivergenceReport, TrainHistory, TrainObserver, TrainingConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes the macro values average over.
    pub averaged: Vec<usize>,
}

fn check_inputs(preds: &[usize], golds: &[usize], k: usize) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs gold labels",
            expected: golds.len(),
            actual: preds.len(),
        });
    }
    if let Some(&bad) = preds.iter().chain(golds).find(|&&v| v >= k) {
        return Err(Error::invalid(format!("label {bad} outside {k} classes")));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro precision, recall and F1 over all `k` classes.
pub fn macro_prf(preds: &[usize], golds: &[usize], k: usize) -> Result<Metrics> {
    let all: Vec<usize> = (0..k).collect();
    macro_prf_over(preds, golds, k, &all)
}

/// As [`macro_prf`], averaging only over `classes`. Per-class rows are
/// computed for every class regardless.
pub fn macro_prf_over(preds: &[usize], golds: &[usize], k: usize, classes: &[usize]) -> Result<Metrics> {
    check_inputs(preds, golds, k)?;
    if classes.is_empty() || classes.iter().any(|&c| c >= k) {
        return Err(Error::invalid("averaging set must be a non-empty subset of the classes"));
    }
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (&p, &g) in preds.iter().zip(golds) {
        predicted[p] += 1;
        support[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            ClassMetrics {
                precision,
                recall,
                f1: f1(precision, recall),
                support: support[c],
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(|&c| f(&per_class[c])).sum::<f64>() / classes.len() as f64;
    Ok(Metrics {
        macro_p: mean(|m| m.precision),
        macro_r: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        averaged: classes.to_vec(),
    })
}

/// `K × K` counts; entry `(i, j)` is gold `i` predicted `j`.
pub fn confusion(preds: &[usize], golds: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check_inputs(preds, golds, k)?;
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &g) in preds.iter().zip(golds) {
        m[g][p] += 1;
    }
    Ok(m)
}

pub fn confusion_csv(matrix: &[Vec<usize>], labels: &LabelSet) -> String {
    let mut out = String::from("gold\\predicted");
    for name in labels.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (name, row) in labels.names().iter().zip(matrix) {
        out.push_str(name);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Metrics JSON with label names attached to the per-class rows.
pub fn metrics_json(metrics: &Metrics, labels: &LabelSet) -> serde_json::Value {
    let per_class: Vec<_> = metrics
        .per_class
        .iter()
        .enumerate()
        .map(|(i, c)| {
            serde_json::json!({
                "label": labels.name(i),
                "precision": c.precision,
                "recall": c.recall,
                "f1": c.f1,
                "support": c.support,
            })
        })
        .collect();
    let averaged: Vec<&str> = metrics.averaged.iter().map(|&i| labels.name(i)).collect();
    serde_json::json!({
        "macro_p": metrics.macro_p,
        "macro_r": metrics.macro_r,
        "macro_f1": metrics.macro_f1,
        "per_class": per_class,
        "averaged_over": averaged,
    })
}

/// Label-blind argmax predictions, one vector per window.
pub fn predict_encoded(model: &Model, data: &EncodedCorpus, vocab_hash: &str) -> Result<Vec<Vec<usize>>> {
    if data.vocab_hash != vocab_hash {
        return Err(Error::VocabMismatch {
            expected: vocab_hash.to_string(),
            actual: data.vocab_hash.clone(),
        });
    }
    data.sequences.iter().map(|s| model.predict_sequence(s)).collect()
}

/// Encodes `sequences` with the checkpoint's vocabulary and predicts.
pub fn predict(checkpoint: &Checkpoint, sequences: &[SegmentSequence]) -> Result<Vec<Vec<NormLabel>>> {
    let data = encode_sequences(sequences, &checkpoint.vocab, checkpoint.model.config().max_len);
    let preds = predict_encoded(&checkpoint.model, &data, &checkpoint.meta.vocab_hash)?;
    Ok(preds
        .into_iter()
        .map(|p| p.into_iter().map(|i| checkpoint.labels.label(i)).collect())
        .collect())
}

/// Flattens gold-labeled turns into parallel `(golds, preds)` vectors.
pub fn golds_and_preds(data: &EncodedCorpus, preds: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut golds = Vec::new();
    let mut out = Vec::new();
    for (seq, p) in data.sequences.iter().zip(preds) {
        for (turn, &pred) in seq.turns.iter().zip(p) {
            if let Some(g) = turn.label {
                golds.push(g);
                out.push(pred);
            }
        }
    }
    (golds, out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub confusion: Vec<Vec<usize>>,
}

/// Scores a checkpoint on labeled windows; `exclude` classes are left out
/// of the macro averages only.
pub fn evaluate(checkpoint: &Checkpoint, sequences: &[SegmentSequence], exclude: &[usize]) -> Result<Evaluation> {
    let data = encode_sequences(sequences, &checkpoint.vocab, checkpoint.model.config().max_len);
    let preds = predict_encoded(&checkpoint.model, &data, &checkpoint.meta.vocab_hash)?;
    let (golds, preds) = golds_and_preds(&data, &preds);
    let k = checkpoint.model.config().num_classes;
    let classes: Vec<usize> = (0..k).filter(|c| !exclude.contains(c)).collect();
    Ok(Evaluation {
        metrics: macro_prf_over(&preds, &golds, k, &classes)?,
        confusion: confusion(&preds, &golds, k)?,
    })
}

/// Row `j` is `softmax(prior_c(one-hot j))`.
pub fn learned_transitions(model: &Model) -> Result<TransitionMatrix> {
    TransitionMatrix::new(model.transition_prior()?)
}

/// Rounds a probability row to integer micro-units summing to exactly one
/// million (largest remainder), so the printed row sums to 1.
fn micro_units(row: &[f64]) -> Vec<u64> {
    const SCALE: f64 = 1e6;
    let total: f64 = row.iter().sum();
    let scaled: Vec<f64> = row.iter().map(|p| p / total * SCALE).collect();
    let mut units: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let short = 1_000_000u64.saturating_sub(units.iter().sum());
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(short as usize) {
        units[i] += 1;
    }
    units
}

/// CSV with label names as header row and column. Row = previous label,
/// column = next label, 6 decimals.
pub fn heatmap_csv(matrix: &TransitionMatrix, labels: &LabelSet) -> Result<String> {
    if matrix.k() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "heatmap labels",
            expected: matrix.k(),
            actual: labels.len(),
        });
    }
    let mut out = String::from("previous");
    for name in labels.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (name, row) in labels.names().iter().zip(matrix.rows()) {
        out.push_str(name);
        for u in micro_units(row) {
            let _ = write!(out, ",{}.{:06}", u / 1_000_000, u % 1_000_000);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn heatmap_export(matrix: &TransitionMatrix, labels: &LabelSet, path: &Path) -> Result<()> {
    let csv = heatmap_csv(matrix, labels)?;
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Inverse of [`heatmap_csv`].
pub fn parse_heatmap(text: &str) -> Result<(LabelSet, TransitionMatrix)> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<heatmap>".into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty heatmap".into()))?;
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let labels = LabelSet::new(names.clone())?;
    let mut rows = Vec::with_capacity(names.len());
    for (i, line) in lines {
        let mut cells = line.split(',');
        let name = cells.next().unwrap_or_default();
        if rows.len() >= names.len() || name != names[rows.len()] {
            return Err(bad(i + 1, format!("unexpected row label `{name}`")));
        }
        let row = cells
            .map(|c| c.trim().parse::<f64>().map_err(|e| bad(i + 1, format!("`{c}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != names.len() {
        return Err(bad(text.lines().count(), format!("{} rows for {} labels", rows.len(), names.len())));
    }
    Ok((labels, TransitionMatrix::new(rows)?))
}

/// Dialogue-level train/dev/test corpora.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

/// Disjoint windows of `length` turns; a short tail becomes a padded window.
pub fn windows(corpus: &Corpus, length: usize) -> Vec<SegmentSequence> {
    window_dialogues(
        corpus,
        WindowConfig {
            length,
            stride: length,
            pad_last: true,
        },
    )
}

/// Short hex digest identifying a configuration pair.
pub fn config_hash(model: &ModelConfig, training: &TrainingConfig) -> String {
    let text = serde_json::to_string(&(model, training)).expect("configs serialize");
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(digest)[..16].to_string()
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub test: Metrics,
    pub dev_macro_f1: f64,
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub diverged: Option<DivergenceReport>,
}

/// Trains on `splits.train`, early-stops on `splits.dev`, scores `splits.test`.
pub fn run_experiment(
    splits: &Splits,
    model: &ModelConfig,
    training: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RunResult> {
    let l = model.window_length;
    let outcome = train(
        &windows(&splits.train, l),
        &windows(&splits.dev, l),
        &splits.train.labels,
        training,
        model,
        observer,
    )?;
    let test = evaluate(&outcome.checkpoint, &windows(&splits.test, l), &[])?;
    let dev_macro_f1 = outcome.history.best().map_or(0.0, |b| b.dev_macro_f1);
    Ok(RunResult {
        test: test.metrics,
        dev_macro_f1,
        checkpoint: outcome.checkpoint,
        history: outcome.history,
        diverged: outcome.diverged,
    })
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median test scores over seeds for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub per_seed_f1: Vec<f64>,
    pub per_seed: Vec<Metrics>,
}

fn summarize(per_seed: Vec<Metrics>) -> SeedSummary {
    let pick = |f: fn(&Metrics) -> f64| median(&per_seed.iter().map(f).collect::<Vec<_>>());
    SeedSummary {
        macro_p: pick(|m| m.macro_p),
        macro_r: pick(|m| m.macro_r),
        macro_f1: pick(|m| m.macro_f1),
        per_seed_f1: per_seed.iter().map(|m| m.macro_f1).collect(),
        per_seed,
    }
}

fn annotate(context: String) -> impl FnOnce(Error) -> Error {
    move |e| Error::Experiment {
        context,
        source: Box::new(e),
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub order: usize,
    pub window_length: usize,
    pub summary: SeedSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl SweepResult {
    /// Order with the highest median macro-F1 (lowest order on ties).
    pub fn peak_order(&self) -> Option<usize> {
        let mut best: Option<&SweepEntry> = None;
        for e in &self.entries {
            if best.is_none_or(|b| e.summary.macro_f1 > b.summary.macro_f1) {
                best = Some(e);
            }
        }
        best.map(|e| e.order)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("order,window_length,macro_p,macro_r,macro_f1,seeds,config_hash\n");
        let seeds = join_seeds(&self.seeds);
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{},{}",
                e.order, e.window_length, e.summary.macro_p, e.summary.macro_r, e.summary.macro_f1, seeds, self.config_hash
            );
        }
        out
    }
}

fn join_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

/// Trains one model per `(order, seed)`. Orders that do not fit the base
/// window grow it to `order + 1` turns.
pub fn context_sweep(
    splits: &Splits,
    orders: &[usize],
    model: &ModelConfig,
    training: &TrainingConfig,
    seeds: &[u64],
    observer: &mut dyn TrainObserver,
) -> Result<SweepResult> {
    check_seeds(seeds)?;
    if orders.is_empty() || orders.iter().any(|&l| !(1..=9).contains(&l)) {
        return Err(Error::invalid("orders must be a non-empty subset of 1..=9"));
    }
    if orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("orders must be strictly increasing"));
    }
    let mut entries = Vec::with_capacity(orders.len());
    for &order in orders {
        let mut mc = model.clone();
        mc.set_variant(model.variant(), order);
        mc.window_length = mc.window_length.max(order + 1);
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let tc = TrainingConfig {
                seed,
                ..training.clone()
            };
            let run = run_experiment(splits, &mc, &tc, observer).map_err(annotate(format!("order {order}, seed {seed}")))?;
            per_seed.push(run.test);
        }
        entries.push(SweepEntry {
            order,
            window_length: mc.window_length,
            summary: summarize(per_seed),
        });
    }
    Ok(SweepResult {
        entries,
        config_hash: config_hash(model, training),
        seeds: seeds.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub config_hash: String,
    pub summary: SeedSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,config_hash,macro_p,macro_r,median_macro_f1,seed_f1,seeds\n");
        let seeds = join_seeds(&self.seeds);
        for r in &self.rows {
            let per_seed: Vec<String> = r.summary.per_seed_f1.iter().map(|f| format!("{f:.6}")).collect();
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{},{}",
                r.variant,
                r.config_hash,
                r.summary.macro_p,
                r.summary.macro_r,
                r.summary.macro_f1,
                per_seed.join(" "),
                seeds
            );
        }
        out
    }

    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Trains one model per `(variant, seed)` with every other setting fixed.
/// Connected variants use the base config's order (at least 1).
pub fn ablation_run(
    splits: &Splits,
    variants: &[Variant],
    model: &ModelConfig,
    training: &TrainingConfig,
    seeds: &[u64],
    observer: &mut dyn TrainObserver,
) -> Result<AblationTable> {
    check_seeds(seeds)?;
    if variants.is_empty() {
        return Err(Error::invalid("at least one variant is required"));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut mc = model.clone();
        mc.set_variant(variant, model.markov_order);
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let tc = TrainingConfig {
                seed,
                ..training.clone()
            };
            let run = run_experiment(splits, &mc, &tc, observer).map_err(annotate(format!("variant {variant}, seed {seed}")))?;
            per_seed.push(run.test);
        }
        rows.push(AblationRow {
            variant,
            config_hash: config_hash(&mc, training),
            summary: summarize(per_seed),
        });
    }
    Ok(AblationTable {
        rows,
        seeds: seeds.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let golds = [0, 1, 2, 1, 0];
        let m = macro_prf(&golds, &golds, 3).unwrap();
        assert_eq!((m.macro_p, m.macro_r, m.macro_f1), (1.0, 1.0, 1.0));
        let c = confusion(&golds, &golds, 3).unwrap();
        for (i, row) in c.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(i == j || v == 0);
            }
        }
    }

    #[test]
    fn hand_worked_two_class_example() {
        let m = macro_prf(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.per_class[0].precision, 0.5);
        assert_eq!(m.per_class[0].recall, 1.0);
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class[1], ClassMetrics { support: 2, ..Default::default() });
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_counts_in_the_average() {
        let m = macro_prf(&[0, 1, 1], &[0, 1, 0], 3).unwrap();
        assert_eq!(m.per_class[2], ClassMetrics::default());
        let mean = (m.per_class[0].f1 + m.per_class[1].f1) / 3.0;
        assert!((m.macro_f1 - mean).abs() < 1e-15);
    }

    #[test]
    fn excluding_a_class_changes_only_the_average() {
        let (p, g) = ([0, 1, 2, 2, 1], [0, 2, 2, 1, 1]);
        let all = macro_prf(&p, &g, 3).unwrap();
        let some = macro_prf_over(&p, &g, 3, &[1, 2]).unwrap();
        assert_eq!(all.per_class, some.per_class);
        assert!((some.macro_f1 - (all.per_class[1].f1 + all.per_class[2].f1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(macro_prf(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[0, 1], &[0], 2).is_err());
        assert!(macro_prf(&[2], &[0], 2).is_err());
    }

    #[test]
    fn identity_heatmap_k2() {
        let labels = LabelSet::first_k(2).unwrap();
        let csv = heatmap_csv(&TransitionMatrix::identity(2), &labels).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[1].ends_with(",1.000000,0.000000"));
        assert!(lines[2].ends_with(",0.000000,1.000000"));
        let (back_labels, back) = parse_heatmap(&csv).unwrap();
        assert_eq!(back_labels, labels);
        assert_eq!(back, TransitionMatrix::identity(2));
    }

    #[test]
    fn median_handles_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    fn labels_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..7).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..60)))
    }

    proptest! {
        #[test]
        fn macro_prf_is_permutation_invariant((k, pairs) in labels_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let a = macro_prf(&p, &g, k).unwrap();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p2, g2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            let b = macro_prf(&p2, &g2, k).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn metrics_lie_in_unit_interval((k, pairs) in labels_strategy()) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let m = macro_prf(&p, &g, k).unwrap();
            for v in [m.macro_p, m.macro_r, m.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let c = confusion(&p, &g, k).unwrap();
            prop_assert_eq!(c.iter().flatten().sum::<usize>(), p.len());
            for (row, cm) in c.iter().zip(&m.per_class) {
                prop_assert_eq!(row.iter().sum::<usize>(), cm.support);
            }
        }

        #[test]
        fn heatmap_rows_sum_to_one_and_round_trip(k in 2usize..9, seed in any::<u64>(), conc in 0.05f64..5.0) {
            let tm = crate::synthgen::sample_transition_matrix(k, conc, seed).unwrap();
            let labels = LabelSet::first_k(k).unwrap();
            let csv = heatmap_csv(&tm, &labels).unwrap();
            for line in csv.lines().skip(1) {
                let s: f64 = line.split(',').skip(1).map(|c| c.parse::<f64>().unwrap()).sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
            let (_, back) = parse_heatmap(&csv).unwrap();
            for (a, b) in tm.rows().iter().flatten().zip(back.rows().iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
