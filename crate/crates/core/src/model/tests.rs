use super::*;
use crate::latentmath::{RngNoise, ZeroNoise};

fn tiny(variant: Variant, order: usize) -> ModelConfig {
    let mut cfg = ModelConfig {
        num_classes: 3,
        d_z: 4,
        d_h: 8,
        d_emb: 8,
        decoder_hidden: 8,
        window_length: 4,
        vocab_size: 20,
        max_len: 10,
        encoder_heads: 2,
        dropout: 0.2,
        ..ModelConfig::default()
    };
    cfg.set_variant(variant, order);
    cfg
}

fn turn(ids: &[usize], label: Option<usize>) -> EncodedTurn {
    let mut v = vec![crate::corpus::BOS];
    v.extend_from_slice(ids);
    v.push(crate::corpus::EOS);
    EncodedTurn { ids: v, label }
}

fn window(labels: [Option<usize>; 4]) -> EncodedSequence {
    let toks: [&[usize]; 4] = [&[6, 7, 8], &[9, 10], &[11, 12, 13, 14], &[15]];
    EncodedSequence {
        turns: toks.iter().zip(labels).map(|(t, l)| turn(t, l)).collect(),
        padded: false,
    }
}

fn q_c_rows(model: &Model, seq: &EncodedSequence, opts: &RunOptions) -> Vec<Vec<f64>> {
    let mut tape = model.tape();
    let out = model.forward_sequence(&mut tape, seq, opts, &mut ZeroNoise).unwrap();
    out.iter().map(|t| tape.row_vec(t.q_c)).collect()
}

#[test]
fn parameter_names_are_unique_and_grouped() {
    let model = Model::new(tiny(Variant::Extended, 2), 1).unwrap();
    let names: Vec<&str> = model.params().iter().map(|(_, n, _)| n).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert!(names.iter().any(|n| n.starts_with(ENCODER_PREFIX)));
    assert!(names.iter().any(|n| n.starts_with("decoder.")));
}

#[test]
fn distributions_are_valid_every_turn() {
    for v in Variant::ALL {
        let model = Model::new(tiny(v, 1), 3).unwrap();
        let mut tape = model.tape();
        let seq = window([Some(0), None, Some(2), None]);
        let mut noise = RngNoise::new(4);
        let out = model
            .forward_sequence(&mut tape, &seq, &RunOptions::train(0.7), &mut noise)
            .unwrap();
        assert_eq!(out.len(), 4);
        for t in &out {
            for c in [t.q_c_params(&tape), t.p_c_params(&tape)] {
                let s: f64 = c.probs().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            for g in [t.q_z_params(&tape), t.p_z_params(&tape)] {
                assert!(g.log_variance.iter().all(|v| (-10.0..=10.0).contains(v)));
            }
            let ctx = tape.row_vec(t.context_c);
            assert!((ctx.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(t.recon_loglik(&tape).unwrap() < 0.0);
        }
    }
}

#[test]
fn zero_variant_is_permutation_equivariant() {
    let model = Model::new(tiny(Variant::Zero, 0), 5).unwrap();
    let seq = window([None; 4]);
    let base = q_c_rows(&model, &seq, &RunOptions::eval());
    let perm = [2, 0, 3, 1];
    let shuffled = EncodedSequence {
        turns: perm.iter().map(|&i| seq.turns[i].clone()).collect(),
        padded: false,
    };
    let moved = q_c_rows(&model, &shuffled, &RunOptions::eval());
    for (slot, &i) in perm.iter().enumerate() {
        assert_eq!(moved[slot], base[i]);
    }
}

#[test]
fn connected_model_carries_context_forward() {
    let model = Model::new(tiny(Variant::Normmark, 1), 6).unwrap();
    let seq = window([None; 4]);
    let base = q_c_rows(&model, &seq, &RunOptions::eval());
    let mut altered = seq.clone();
    altered.turns[0] = turn(&[16, 17, 18, 19], None);
    let moved = q_c_rows(&model, &altered, &RunOptions::eval());
    assert_ne!(base[1], moved[1]);
}

#[test]
fn gold_context_bounds_label_dependence_to_order() {
    let model = Model::new(tiny(Variant::Normmark, 1), 7).unwrap();
    let seq = window([Some(1), Some(0), Some(2), Some(1)]);
    let mut altered = seq.clone();
    altered.turns[0] = turn(&[16, 17], Some(1));
    let run = |s: &EncodedSequence| {
        let mut tape = model.tape();
        let out = model.forward_sequence(&mut tape, s, &RunOptions::eval(), &mut ZeroNoise).unwrap();
        out.iter()
            .map(|t| (tape.row_vec(t.q_c), tape.row_vec(t.p_c)))
            .collect::<Vec<_>>()
    };
    let (a, b) = (run(&seq), run(&altered));
    assert_ne!(a[0], b[0]);
    assert_eq!(a[1..], b[1..]);
}

#[test]
fn first_turn_matches_severed_variant() {
    let connected = Model::new(tiny(Variant::Normmark, 1), 8).unwrap();
    let mut severed = connected.clone();
    severed.config.set_variant(Variant::Zero, 0);
    let seq = window([None; 4]);
    let a = q_c_rows(&connected, &seq, &RunOptions::eval());
    let b = q_c_rows(&severed, &seq, &RunOptions::eval());
    assert_eq!(a[0], b[0]);
}

#[test]
fn zero_context_prior_is_standard_normal() {
    let model = Model::new(tiny(Variant::Normmark, 2), 9).unwrap();
    let mut tape = model.tape();
    let ctx = tape.zeros(1, model.z_context_width());
    let p = model.prior_z(&mut tape, ctx).unwrap().values(&tape);
    assert_eq!(p, GaussianParams::standard(4));
}

#[test]
fn zeroed_classifier_gives_uniform_posterior() {
    let mut model = Model::new(tiny(Variant::Normmark, 1), 10).unwrap();
    let ids: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, n, _)| n.starts_with("classifier."))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        model.params_mut().get_mut(id).fill(0.0);
    }
    let rows = q_c_rows(&model, &window([None; 4]), &RunOptions::eval());
    for r in rows {
        let p = CategoricalParams { logits: r }.probs();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }
}

#[test]
fn eval_mode_is_deterministic() {
    let model = Model::new(tiny(Variant::Extended, 2), 11).unwrap();
    let seq = window([None, Some(1), None, None]);
    assert_eq!(
        q_c_rows(&model, &seq, &RunOptions::eval()),
        q_c_rows(&model, &seq, &RunOptions::eval())
    );
}

#[test]
fn prediction_ignores_gold_labels() {
    let model = Model::new(tiny(Variant::Normmark, 1), 12).unwrap();
    let a = model.predict_sequence(&window([Some(0), Some(1), Some(2), Some(0)])).unwrap();
    let b = model.predict_sequence(&window([Some(2), None, Some(0), Some(1)])).unwrap();
    assert_eq!(a, b);
}

/// Normal draws from a fixed stream, Gumbel draws from a caller-chosen one.
struct SplitNoise {
    normal: RngNoise,
    gumbel: RngNoise,
}

impl NoiseSource for SplitNoise {
    fn standard_normal(&mut self, n: usize) -> Vec<f64> {
        self.normal.standard_normal(n)
    }
    fn gumbel(&mut self, n: usize) -> Vec<f64> {
        self.gumbel.gumbel(n)
    }
    fn dropout_mask(&mut self, n: usize, keep: f64) -> Vec<f64> {
        self.normal.dropout_mask(n, keep)
    }
}

#[test]
fn enumeration_ignores_gumbel_noise() {
    let model = Model::new(tiny(Variant::Normmark, 1), 13).unwrap();
    let seq = window([None; 4]);
    let recon = |enumerate: bool, seed: u64| {
        let opts = RunOptions {
            enumerate,
            dropout: false,
            ..RunOptions::train(0.5)
        };
        let mut tape = model.tape();
        let mut noise = SplitNoise {
            normal: RngNoise::new(99),
            gumbel: RngNoise::new(seed),
        };
        let out = model.forward_sequence(&mut tape, &seq, &opts, &mut noise).unwrap();
        out.iter().map(|t| t.recon_loglik(&tape).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(recon(true, 1), recon(true, 2));
    assert_ne!(recon(false, 1), recon(false, 2));
}

#[test]
fn rejects_malformed_sequences() {
    let model = Model::new(tiny(Variant::Normmark, 1), 14).unwrap();
    let mut tape = model.tape();
    let mut short = window([None; 4]);
    short.turns.pop();
    assert!(model
        .forward_sequence(&mut tape, &short, &RunOptions::eval(), &mut ZeroNoise)
        .is_err());
    short.padded = true;
    assert!(model
        .forward_sequence(&mut tape, &short, &RunOptions::eval(), &mut ZeroNoise)
        .is_ok());
    let mut bad = window([Some(5), None, None, None]);
    assert!(model
        .forward_sequence(&mut tape, &bad, &RunOptions::eval(), &mut ZeroNoise)
        .is_err());
    bad.turns[0] = turn(&[25], None);
    assert!(model
        .forward_sequence(&mut tape, &bad, &RunOptions::eval(), &mut ZeroNoise)
        .is_err());
}

#[test]
fn transition_prior_rows_are_distributions() {
    let model = Model::new(tiny(Variant::Normmark, 3), 15).unwrap();
    let rows = model.transition_prior().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    use crate::corpus::{LabelSet, Vocabulary};
    let model = Model::new(tiny(Variant::Normmark, 1), 16).unwrap();
    let tokens: Vec<String> = (0..14).map(|i| format!("t{i}")).collect();
    let vocab = Vocabulary::with_specials(tokens).unwrap();
    assert_eq!(vocab.len(), 20);
    let labels = LabelSet::first_k(3).unwrap();
    let ckpt = Checkpoint::new(
        model,
        vocab,
        labels,
        42,
        RngState {
            seed: 3,
            word_pos: "17".into(),
        },
    );
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.meta, ckpt.meta);
    for (id, name, value) in ckpt.model.params().iter() {
        assert_eq!(back.model.params().name(id), name);
        assert_eq!(back.model.params().get(id), value);
    }
    let seq = window([None; 4]);
    assert_eq!(
        back.model.predict_sequence(&seq).unwrap(),
        ckpt.model.predict_sequence(&seq).unwrap()
    );

    std::fs::write(dir.path().join("vocab.json"), "[\"x\"]").unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}
