use normmark::corpus::{BOS, EOS};
use normmark::latentmath::RngNoise;
use normmark::model::{EncodedSequence, EncodedTurn, EncoderKind, Model, ModelConfig, PriorMode, RunOptions, Variant};
use normmark::objective::{total_loss, LossWeights};
use normmark_tape::check_gradients;

fn tiny(prior_mode: PriorMode, encoder: EncoderKind, variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig {
        num_classes: 3,
        d_z: 4,
        d_h: 8,
        d_emb: 8,
        decoder_hidden: 8,
        window_length: 3,
        vocab_size: 20,
        max_len: 8,
        encoder,
        encoder_layers: 1,
        encoder_heads: 2,
        prior_mode,
        ..ModelConfig::default()
    };
    cfg.set_variant(variant, 2);
    cfg
}

fn sequence(labels: [Option<usize>; 3]) -> EncodedSequence {
    let toks: [&[usize]; 3] = [&[6, 9, 12], &[7, 18], &[15, 8, 19, 10]];
    EncodedSequence {
        turns: toks
            .iter()
            .zip(labels)
            .map(|(t, label)| {
                let mut ids = vec![BOS];
                ids.extend_from_slice(t);
                ids.push(EOS);
                EncodedTurn { ids, label }
            })
            .collect(),
        padded: false,
    }
}

fn max_error(cfg: ModelConfig, seq: &EncodedSequence) -> f64 {
    let model = Model::new(cfg, 4).unwrap();
    let opts = RunOptions {
        enumerate: true,
        dropout: false,
        ..RunOptions::train(0.8)
    };
    let weights = LossWeights {
        lambda: 0.9,
        weight_ce: 1.1,
        ..LossWeights::default()
    };
    let report = check_gradients(
        model.params(),
        |tape| {
            let mut noise = RngNoise::new(17);
            let turns = model.forward_sequence(tape, seq, &opts, &mut noise).unwrap();
            total_loss(tape, &turns, &weights).unwrap().0
        },
        1e-4,
        1e-6,
        |_, _| true,
    );
    assert!(report.checked > 0);
    report.max_rel_error
}

#[test]
fn unlabeled_bag_conditional() {
    let err = max_error(
        tiny(PriorMode::Conditional, EncoderKind::Bag, Variant::Normmark),
        &sequence([None; 3]),
    );
    assert!(err <= 1e-3, "max relative error {err}");
}

#[test]
fn labeled_attention_standard() {
    let err = max_error(
        tiny(PriorMode::Standard, EncoderKind::Attention, Variant::Normmark),
        &sequence([Some(2), Some(0), Some(1)]),
    );
    assert!(err <= 1e-3, "max relative error {err}");
}

#[test]
fn mixed_extended_conditional() {
    let err = max_error(
        tiny(PriorMode::Conditional, EncoderKind::Bag, Variant::Extended),
        &sequence([Some(1), None, None]),
    );
    assert!(err <= 1e-3, "max relative error {err}");
}
