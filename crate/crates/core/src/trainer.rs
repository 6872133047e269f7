//! Training loop: seeded shuffling, mini-batches of windows, AdamW with
//! separate encoder and head learning rates, gradient clipping, and early
//! stopping on dev macro-F1.

use std::collections::BTreeMap;
use std::time::Instant;

use normmark_tape::{Gradients, ParamId, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, Corpus, Dialogue, LabelSet, SegmentSequence, SplitTag, Vocabulary};
use crate::error::{Error, Result};
use crate::evalsuite::{golds_and_preds, macro_prf, predict_encoded};
use crate::latentmath::{RngNoise, ZeroNoise};
use crate::model::{encode_sequences, Checkpoint, EncodedCorpus, Model, ModelConfig, RngState, RunOptions};
use crate::objective::{total_loss, LossReport, LossWeights};

/// Quantity early stopping and best-checkpoint selection monitor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monitor {
    MacroF1,
    Accuracy,
}

impl std::str::FromStr for Monitor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro-f1" => Ok(Monitor::MacroF1),
            "accuracy" => Ok(Monitor::Accuracy),
            _ => Err(Error::invalid(format!("unknown monitor `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr_encoder: f64,
    pub lr_rest: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub weight_ce: f64,
    pub ce_outside_lambda: bool,
    /// False trains on labeled turns only.
    pub use_unlabeled: bool,
    pub tau_start: f64,
    pub tau_floor: f64,
    pub tau_decay: f64,
    pub kl_warmup: bool,
    pub kl_warmup_fraction: f64,
    /// Score unlabeled turns by exact enumeration over `c`.
    pub enumerate: bool,
    pub grad_clip_norm: f64,
    pub monitor: Monitor,
    pub vocab_min_count: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 1e-5,
            lr_rest: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 50,
            patience: 20,
            batch_size: 16,
            lambda: 1.0,
            weight_ce: 1.0,
            ce_outside_lambda: false,
            use_unlabeled: true,
            tau_start: 1.0,
            tau_floor: 0.3,
            tau_decay: 0.9995,
            kl_warmup: true,
            kl_warmup_fraction: 0.1,
            enumerate: false,
            grad_clip_norm: 5.0,
            monitor: Monitor::MacroF1,
            vocab_min_count: 1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_encoder >= 0.0 && self.lr_rest >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.tau_start > 0.0 && self.tau_floor > 0.0 && self.tau_decay > 0.0 && self.tau_decay <= 1.0) {
            return Err(Error::invalid("temperature schedule must be positive with decay in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.kl_warmup_fraction) {
            return Err(Error::invalid("kl_warmup_fraction must lie in [0, 1]"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::invalid("grad_clip_norm must be positive"));
        }
        Ok(())
    }

    pub fn loss_weights(&self, kl_z_weight: f64) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            weight_ce: self.weight_ce,
            kl_z_weight,
            ce_outside_lambda: self.ce_outside_lambda,
            use_unlabeled: self.use_unlabeled,
        }
    }

    /// KL warm-up multiplier at `step` of `total_steps`.
    pub fn kl_weight(&self, step: u64, total_steps: u64) -> f64 {
        if !self.kl_warmup || self.kl_warmup_fraction == 0.0 {
            return 1.0;
        }
        let ramp = self.kl_warmup_fraction * total_steps as f64;
        if ramp <= 0.0 {
            1.0
        } else {
            (step as f64 / ramp).min(1.0)
        }
    }
}

/// `max(floor, start · decay^step)`.
pub fn anneal_tau(step: u64, config: &TrainingConfig) -> f64 {
    let t = config.tau_start * config.tau_decay.powf(step as f64);
    t.max(config.tau_floor)
}

/// True iff more than `patience` evaluations have passed since the first
/// occurrence of the best score.
pub fn early_stop_check(scores: &[f64], patience: usize) -> bool {
    match best_index(scores) {
        Some(best) => scores.len() - 1 - best > patience,
        None => false,
    }
}

/// First index of the maximum; only strict increases count as improvement.
pub fn best_index(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Encoder parameters and everything else, each with its learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub lr: f64,
    pub params: Vec<ParamId>,
}

pub fn make_param_groups(model: &Model, config: &TrainingConfig) -> [ParamGroup; 2] {
    let (enc, rest): (Vec<ParamId>, Vec<ParamId>) =
        model.params().ids().partition(|&id| model.is_encoder_param(id));
    [
        ParamGroup {
            lr: config.lr_encoder,
            params: enc,
        },
        ParamGroup {
            lr: config.lr_rest,
            params: rest,
        },
    ]
}

/// Decoupled-weight-decay Adam. Parameters whose gradient is absent or all
/// zero are left untouched, including their decay and moment estimates.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Option<ndarray::Array2<f64>>>,
    v: Vec<Option<ndarray::Array2<f64>>>,
    steps: Vec<u64>,
}

impl AdamW {
    pub fn new(store: &ParamStore, groups: &[ParamGroup], config: &TrainingConfig) -> Self {
        let mut lr = vec![0.0; store.len()];
        for g in groups {
            for id in &g.params {
                lr[id.0] = g.lr;
            }
        }
        Self {
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
            steps: vec![0; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let i = id.0;
            let lr = self.lr[i];
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let m = self.m[i].get_or_insert_with(|| ndarray::Array2::zeros(g.dim()));
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self.v[i].get_or_insert_with(|| ndarray::Array2::zeros(g.dim()));
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            if lr == 0.0 {
                continue;
            }
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (self.m[i].as_ref().unwrap(), self.v[i].as_ref().unwrap());
            let p = store.get_mut(id);
            let decay = 1.0 - lr * self.weight_decay;
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let update = (m / bc1) / ((v / bc2).sqrt() + self.eps);
                *p = *p * decay - lr * update;
            });
        }
    }
}

/// One epoch of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    /// Mean per sequence over the epoch.
    pub train: LossReport,
    pub dev_macro_f1: f64,
    pub dev_accuracy: f64,
    /// Deterministic dev loss, mean per sequence.
    pub dev: LossReport,
    pub tau: f64,
    /// Seconds; not written to `history.jsonl`, which must be reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch record serializes") + "\n")
            .collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|b| self.epochs.iter().find(|e| e.epoch == b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub epoch: usize,
    pub step: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-dev checkpoint, or the last finite one after a divergence.
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub diverged: Option<DivergenceReport>,
}

/// Hooks for progress reporting.
pub trait TrainObserver {
    fn on_step(&mut self, _step: u64, _report: &LossReport) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

pub struct Silent;

impl TrainObserver for Silent {}

/// Deterministic loss over a corpus, summed over sequences.
pub fn eval_loss(model: &Model, data: &EncodedCorpus, weights: &LossWeights) -> Result<LossReport> {
    let mut acc = LossReport {
        lambda: weights.lambda,
        ..LossReport::default()
    };
    for seq in &data.sequences {
        let mut tape = model.tape();
        let turns = model.forward_sequence(&mut tape, seq, &RunOptions::eval(), &mut ZeroNoise)?;
        let (_, r) = total_loss(&mut tape, &turns, weights)?;
        acc.merge(&r);
    }
    Ok(acc)
}

/// Macro-F1 and accuracy on the labeled turns of `data`.
pub fn dev_scores(model: &Model, data: &EncodedCorpus) -> Result<(f64, f64)> {
    let preds = predict_encoded(model, data, &data.vocab_hash)?;
    let (golds, preds) = golds_and_preds(data, &preds);
    if golds.is_empty() {
        return Ok((0.0, 0.0));
    }
    let m = macro_prf(&preds, &golds, model.config().num_classes)?;
    let acc = golds.iter().zip(&preds).filter(|(g, p)| g == p).count() as f64 / golds.len() as f64;
    Ok((m.macro_f1, acc))
}

fn sequences_corpus(seqs: &[SegmentSequence], labels: &LabelSet) -> Corpus {
    let dialogues = seqs
        .iter()
        .map(|s| Dialogue {
            id: s.source_dialogue.clone(),
            segments: s.scoring().cloned().collect(),
        })
        .collect();
    Corpus::new(dialogues, labels.clone(), SplitTag::Train)
}

/// Builds the vocabulary from `train`, then trains.
pub fn train(
    train: &[SegmentSequence],
    dev: &[SegmentSequence],
    labels: &LabelSet,
    config: &TrainingConfig,
    model_config: &ModelConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus("training and dev sequences must be non-empty".into()));
    }
    let vocab = build_vocab(&sequences_corpus(train, labels), config.vocab_min_count)?;
    let mut mc = model_config.clone();
    mc.vocab_size = vocab.len();
    mc.num_classes = labels.len();
    let train_enc = encode_sequences(train, &vocab, mc.max_len);
    let dev_enc = encode_sequences(dev, &vocab, mc.max_len);
    train_encoded(&train_enc, &dev_enc, &vocab, labels, config, &mc, observer)
}

/// Trains on pre-encoded windows.
pub fn train_encoded(
    train: &EncodedCorpus,
    dev: &EncodedCorpus,
    vocab: &Vocabulary,
    labels: &LabelSet,
    config: &TrainingConfig,
    model_config: &ModelConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if train.sequences.is_empty() || dev.sequences.is_empty() {
        return Err(Error::EmptyCorpus("training and dev sequences must be non-empty".into()));
    }
    let hash = vocab.hash();
    if train.vocab_hash != hash || dev.vocab_hash != hash {
        return Err(Error::VocabMismatch {
            expected: hash,
            actual: if train.vocab_hash != vocab.hash() {
                train.vocab_hash.clone()
            } else {
                dev.vocab_hash.clone()
            },
        });
    }
    if model_config.vocab_size != vocab.len() || model_config.num_classes != labels.len() {
        return Err(Error::invalid("model config disagrees with vocabulary or label set"));
    }

    let mut model = Model::new(model_config.clone(), config.seed)?;
    let groups = make_param_groups(&model, config);
    let mut opt = AdamW::new(model.params(), &groups, config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);
    let mut noise = RngNoise::from_rng(noise_rng);

    let batches_per_epoch = train.sequences.len().div_ceil(config.batch_size) as u64;
    let total_steps = batches_per_epoch * config.epochs as u64;
    let eval_weights = config.loss_weights(1.0);
    let mut order: Vec<usize> = (0..train.sequences.len()).collect();
    let mut history = TrainHistory::default();
    let mut scores = Vec::new();
    let mut best_params: Option<ParamStore> = None;
    let mut step: u64 = 0;
    let mut diverged = None;

    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_report = LossReport::default();
        let mut tau = anneal_tau(step, config);
        for batch in order.chunks(config.batch_size) {
            tau = anneal_tau(step, config);
            let opts = RunOptions {
                enumerate: config.enumerate,
                ..RunOptions::train(tau)
            };
            let weights = config.loss_weights(config.kl_weight(step, total_steps));
            let scale = 1.0 / batch.len() as f64;
            let mut grads = Gradients::zeros_like(model.params());
            let mut batch_report = LossReport::default();
            for &i in batch {
                let seq = &train.sequences[i];
                let mut tape = model.tape();
                let turns = model.forward_sequence(&mut tape, seq, &opts, &mut noise)?;
                let (loss, report) = total_loss(&mut tape, &turns, &weights)?;
                batch_report.merge(&report);
                grads.accumulate(&tape.backward(loss), scale);
            }
            if !batch_report.is_finite() || !grads.all_finite() {
                diverged = Some(DivergenceReport {
                    epoch,
                    step,
                    message: format!("non-finite loss or gradient (total {})", batch_report.total),
                });
                break 'epochs;
            }
            grads.clip_global_norm(config.grad_clip_norm);
            opt.step(model.params_mut(), &grads);
            if !model.params().all_finite() {
                diverged = Some(DivergenceReport {
                    epoch,
                    step,
                    message: "parameters became non-finite".into(),
                });
                break 'epochs;
            }
            step += 1;
            observer.on_step(step, &batch_report.per_sequence());
            epoch_report.merge(&batch_report);
        }

        let (f1, acc) = dev_scores(&model, dev)?;
        let dev_loss = eval_loss(&model, dev, &eval_weights)?;
        let record = EpochRecord {
            epoch,
            steps: step,
            train: epoch_report.per_sequence(),
            dev_macro_f1: f1,
            dev_accuracy: acc,
            dev: dev_loss.per_sequence(),
            tau,
            wall_time: started.elapsed().as_secs_f64(),
        };
        observer.on_epoch(&record);
        history.epochs.push(record);
        scores.push(match config.monitor {
            Monitor::MacroF1 => f1,
            Monitor::Accuracy => acc,
        });
        let best = best_index(&scores).expect("scores non-empty");
        if best == scores.len() - 1 {
            best_params = Some(model.params().clone());
            history.best_epoch = Some(epoch);
        }
        if early_stop_check(&scores, config.patience) {
            history.stopped_early = epoch < config.epochs;
            break;
        }
    }

    if diverged.is_none() {
        if let Some(p) = &best_params {
            model.load_values(p)?;
        }
    }
    let rng_state = RngState::capture(config.seed, noise.rng());
    let mut checkpoint = Checkpoint::new(model, vocab.clone(), labels.clone(), step, rng_state);
    checkpoint.meta.flags = training_flags(config);
    Ok(TrainOutcome {
        checkpoint,
        history,
        diverged,
    })
}

fn training_flags(config: &TrainingConfig) -> BTreeMap<String, serde_json::Value> {
    use serde_json::json;
    BTreeMap::from([
        ("grad_clip_norm".to_string(), json!(config.grad_clip_norm)),
        ("kl_warmup".to_string(), json!(config.kl_warmup)),
        ("kl_warmup_fraction".to_string(), json!(config.kl_warmup_fraction)),
        ("lambda".to_string(), json!(config.lambda)),
        ("use_unlabeled".to_string(), json!(config.use_unlabeled)),
        ("ce_outside_lambda".to_string(), json!(config.ce_outside_lambda)),
        ("monitor".to_string(), json!(config.monitor)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latentmath::RngNoise;
    use crate::model::{EncodedSequence, EncodedTurn, Variant};

    #[test]
    fn tau_schedule() {
        let c = TrainingConfig::default();
        assert_eq!(anneal_tau(0, &c), 1.0);
        assert_eq!(anneal_tau(10_000_000, &c), 0.3);
        let mut prev = f64::INFINITY;
        for s in (0..20_000).step_by(37) {
            let t = anneal_tau(s, &c);
            assert!(t <= prev && t >= 0.3);
            prev = t;
        }
    }

    #[test]
    fn early_stopping_examples() {
        assert!(!early_stop_check(&[0.2, 0.3, 0.3], 2));
        assert!(early_stop_check(&[0.3, 0.2, 0.2, 0.2], 2));
        let inc: Vec<f64> = (0..30).map(|i| i as f64).collect();
        for n in 1..=inc.len() {
            assert!(!early_stop_check(&inc[..n], 0));
        }
        assert_eq!(best_index(&[0.1, 0.4, 0.4, 0.2]), Some(1));
    }

    #[test]
    fn kl_warmup_ramps_and_can_be_disabled() {
        let mut c = TrainingConfig::default();
        assert_eq!(c.kl_weight(0, 100), 0.0);
        assert_eq!(c.kl_weight(5, 100), 0.5);
        assert_eq!(c.kl_weight(50, 100), 1.0);
        c.kl_warmup = false;
        assert_eq!(c.kl_weight(0, 100), 1.0);
    }

    fn tiny_model() -> Model {
        let mut cfg = ModelConfig {
            num_classes: 3,
            d_z: 4,
            d_h: 8,
            d_emb: 8,
            decoder_hidden: 8,
            window_length: 2,
            vocab_size: 20,
            max_len: 8,
            encoder_heads: 2,
            ..ModelConfig::default()
        };
        cfg.set_variant(Variant::Normmark, 1);
        Model::new(cfg, 3).unwrap()
    }

    #[test]
    fn param_groups_partition_the_model() {
        let model = tiny_model();
        let [enc, rest] = make_param_groups(&model, &TrainingConfig::default());
        assert_eq!(enc.lr, 1e-5);
        assert_eq!(rest.lr, 1e-3);
        assert_eq!(enc.params.len() + rest.params.len(), model.params().len());
        assert!(enc.params.iter().all(|p| !rest.params.contains(p)));
        assert!(enc.params.iter().all(|&p| model.params().name(p).starts_with("encoder.")));
        let count: usize = enc
            .params
            .iter()
            .chain(&rest.params)
            .map(|&p| model.params().get(p).len())
            .sum();
        assert_eq!(count, model.param_count());
    }

    #[test]
    fn adamw_moves_exactly_the_parameters_with_gradient() {
        let mut model = tiny_model();
        let seq = EncodedSequence {
            turns: vec![
                EncodedTurn {
                    ids: vec![2, 6, 7, 3],
                    label: Some(1),
                },
                EncodedTurn {
                    ids: vec![2, 8, 3],
                    label: None,
                },
            ],
            padded: false,
        };
        let config = TrainingConfig {
            lr_encoder: 1e-3,
            ..TrainingConfig::default()
        };
        let groups = make_param_groups(&model, &config);
        let mut opt = AdamW::new(model.params(), &groups, &config);
        let grads = {
            let mut tape = model.tape();
            let turns = model
                .forward_sequence(&mut tape, &seq, &RunOptions::train(1.0), &mut RngNoise::new(1))
                .unwrap();
            let (loss, _) = total_loss(&mut tape, &turns, &LossWeights::default()).unwrap();
            tape.backward(loss)
        };
        let before = model.params().clone();
        opt.step(model.params_mut(), &grads);
        let mut moved = 0;
        for id in before.ids() {
            let old = before.get(id);
            let new = model.params().get(id);
            let g = grads.get(id);
            for (k, (a, b)) in old.iter().zip(new.iter()).enumerate() {
                let gk = g.map_or(0.0, |g| g.as_slice().unwrap()[k]);
                let whole_zero = g.is_none_or(|g| g.iter().all(|&x| x == 0.0));
                if whole_zero {
                    assert_eq!(a, b, "{} moved without gradient", before.name(id));
                } else if gk != 0.0 {
                    assert_ne!(a, b, "{} stuck despite gradient", before.name(id));
                    moved += 1;
                }
            }
        }
        assert!(moved > 0);
    }
}
