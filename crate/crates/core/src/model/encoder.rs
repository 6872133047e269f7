use normmark_tape::{ParamId, ParamStore, Tape, Var};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderKind, ModelConfig};
use super::layers::{uniform, LayerNorm, Linear};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::latentmath::NoiseSource;

#[derive(Clone, Debug)]
struct Block {
    ln_attn: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

/// Turn encoder producing `h` (`1 × d_h`).
#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    kind: EncoderKind,
    tok_emb: ParamId,
    pos_emb: Option<ParamId>,
    in_proj: Linear,
    blocks: Vec<Block>,
    ln_out: Option<LayerNorm>,
    heads: usize,
    dropout: f64,
    vocab_size: usize,
    max_len: usize,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let tok_emb = store.insert(
            "encoder.tok_emb",
            uniform(rng, cfg.vocab_size, cfg.d_emb, 0.5),
        );
        let attention = cfg.encoder == EncoderKind::Attention;
        let pos_emb = attention
            .then(|| store.insert("encoder.pos_emb", uniform(rng, cfg.max_len, cfg.d_emb, 0.5)));
        let in_proj = Linear::new(store, rng, "encoder.in_proj", cfg.d_emb, cfg.d_h, true);
        let d = cfg.d_h;
        let blocks = if attention {
            (0..cfg.encoder_layers)
                .map(|i| {
                    let p = format!("encoder.layers.{i}");
                    Block {
                        ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), d),
                        wq: Linear::new(store, rng, &format!("{p}.attn.q"), d, d, true),
                        wk: Linear::new(store, rng, &format!("{p}.attn.k"), d, d, true),
                        wv: Linear::new(store, rng, &format!("{p}.attn.v"), d, d, true),
                        wo: Linear::new(store, rng, &format!("{p}.attn.out"), d, d, true),
                        ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), d),
                        ff_in: Linear::new(store, rng, &format!("{p}.ff.in"), d, 2 * d, true),
                        ff_out: Linear::new(store, rng, &format!("{p}.ff.out"), 2 * d, d, true),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let ln_out = attention.then(|| LayerNorm::new(store, "encoder.ln_out", d));
        Self {
            kind: cfg.encoder,
            tok_emb,
            pos_emb,
            in_proj,
            blocks,
            ln_out,
            heads: cfg.encoder_heads,
            dropout: cfg.dropout,
            vocab_size: cfg.vocab_size,
            max_len: cfg.max_len,
        }
    }

    /// Encodes one turn. Input dropout is applied iff `dropout` is given.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        dropout: Option<&mut (dyn NoiseSource + '_)>,
    ) -> Result<Var> {
        if ids.len() > self.max_len {
            return Err(Error::DimensionMismatch {
                context: "turn length (max_len)",
                expected: self.max_len,
                actual: ids.len(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let (positions, tokens): (Vec<usize>, Vec<usize>) = ids
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != PAD)
            .map(|(p, &t)| (p, t))
            .unzip();
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an all-PAD turn"));
        }

        let table = tape.param(self.tok_emb);
        let mut x = tape.gather_rows(table, &tokens);
        if let Some(pos) = self.pos_emb {
            let pos = tape.param(pos);
            let p = tape.gather_rows(pos, &positions);
            x = tape.add(x, p);
        }
        if let Some(noise) = dropout {
            if self.dropout > 0.0 {
                let (r, c) = tape.shape(x);
                let mask = noise.dropout_mask(r * c, 1.0 - self.dropout);
                let mask = tape.constant(ndarray::Array2::from_shape_vec((r, c), mask).unwrap());
                x = tape.mul(x, mask);
            }
        }

        match self.kind {
            EncoderKind::Bag => {
                let pooled = tape.mean_rows(x);
                let h = self.in_proj.forward(tape, pooled);
                Ok(tape.tanh(h))
            }
            EncoderKind::Attention => {
                let mut x = self.in_proj.forward(tape, x);
                for b in &self.blocks {
                    let a = b.ln_attn.forward(tape, x);
                    let q = b.wq.forward(tape, a);
                    let k = b.wk.forward(tape, a);
                    let v = b.wv.forward(tape, a);
                    let att = tape.attention(q, k, v, self.heads);
                    let att = b.wo.forward(tape, att);
                    x = tape.add(x, att);
                    let f = b.ln_ff.forward(tape, x);
                    let f = b.ff_in.forward(tape, f);
                    let f = tape.gelu(f);
                    let f = b.ff_out.forward(tape, f);
                    x = tape.add(x, f);
                }
                let x = self.ln_out.expect("attention encoder has output norm").forward(tape, x);
                Ok(tape.mean_rows(x))
            }
        }
    }
}
