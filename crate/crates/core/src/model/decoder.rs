use ndarray::Array2;
use normmark_tape::{ParamId, ParamStore, Tape, Var};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{uniform, Linear};
use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Single-layer LSTM language model over a turn, conditioned by overwriting
/// the `Z_TOK` / `C_TOK` input slots with projections of `z` and `c`.
#[derive(Clone, Debug)]
pub(crate) struct Decoder {
    tok_emb: ParamId,
    z_proj: Linear,
    label_emb: ParamId,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    out: Linear,
    hidden: usize,
    num_classes: usize,
    d_z: usize,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let h = cfg.decoder_hidden;
        let tok_emb = store.insert("decoder.tok_emb", uniform(rng, cfg.vocab_size, cfg.d_emb, 0.5));
        let z_proj = Linear::new(store, rng, "decoder.z_proj", cfg.d_z, cfg.d_emb, true);
        let label_emb = store.insert(
            "decoder.label_emb",
            uniform(rng, cfg.num_classes, cfg.d_emb, 0.5),
        );
        let bound = 1.0 / (h as f64).sqrt();
        let w_ih = store.insert("decoder.lstm.w_ih", uniform(rng, cfg.d_emb, 4 * h, bound));
        let w_hh = store.insert("decoder.lstm.w_hh", uniform(rng, h, 4 * h, bound));
        // Gate order i, f, g, o; forget gate starts open.
        let mut b = Array2::zeros((1, 4 * h));
        b.slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
        let bias = store.insert("decoder.lstm.b", b);
        let out = Linear::new(store, rng, "decoder.out", h, cfg.vocab_size, true);
        Self {
            tok_emb,
            z_proj,
            label_emb,
            w_ih,
            w_hh,
            bias,
            out,
            hidden: h,
            num_classes: cfg.num_classes,
            d_z: cfg.d_z,
        }
    }

    /// `Σ_t log p(target_t | target_<t, z, c)` with teacher forcing, as a
    /// `1 × 1` node. `c` may be one-hot or any point on the simplex.
    pub fn log_likelihood(&self, tape: &mut Tape<'_>, z: Var, c: Var, target: &[usize]) -> Result<Var> {
        if target.len() < 2 || target[0] != BOS || *target.last().unwrap() != EOS {
            return Err(Error::invalid("decoder target must start with BOS and end with EOS"));
        }
        if tape.shape(z) != (1, self.d_z) {
            return Err(Error::DimensionMismatch {
                context: "decoder z",
                expected: self.d_z,
                actual: tape.shape(z).1,
            });
        }
        if tape.shape(c) != (1, self.num_classes) {
            return Err(Error::DimensionMismatch {
                context: "decoder c",
                expected: self.num_classes,
                actual: tape.shape(c).1,
            });
        }

        let z_in = self.z_proj.forward(tape, z);
        let label_emb = tape.param(self.label_emb);
        let c_in = tape.matmul(c, label_emb);
        let table = tape.param(self.tok_emb);
        let prefix = &target[..target.len() - 1];
        let tok_in = tape.gather_rows(table, prefix);
        let inputs = tape.concat_rows(&[z_in, c_in, tok_in]);

        let w_ih = tape.param(self.w_ih);
        let w_hh = tape.param(self.w_hh);
        let bias = tape.param(self.bias);
        let projected = tape.matmul(inputs, w_ih);
        let projected = tape.add_row(projected, bias);

        let h_dim = self.hidden;
        let mut h = tape.zeros(1, h_dim);
        let mut cell = tape.zeros(1, h_dim);
        let steps = tape.shape(inputs).0;
        let mut outputs = Vec::with_capacity(prefix.len());
        for t in 0..steps {
            let x_t = tape.slice_rows(projected, t, 1);
            let rec = tape.matmul(h, w_hh);
            let gates = tape.add(x_t, rec);
            let i = tape.slice_cols(gates, 0, h_dim);
            let f = tape.slice_cols(gates, h_dim, h_dim);
            let g = tape.slice_cols(gates, 2 * h_dim, h_dim);
            let o = tape.slice_cols(gates, 3 * h_dim, h_dim);
            let i = tape.sigmoid(i);
            let f = tape.sigmoid(f);
            let g = tape.tanh(g);
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, cell);
            let write = tape.mul(i, g);
            cell = tape.add(keep, write);
            let squashed = tape.tanh(cell);
            h = tape.mul(o, squashed);
            // Slots 0 and 1 carry z and c; predictions start after BOS.
            if t >= 2 {
                outputs.push(h);
            }
        }

        let hs = tape.concat_rows(&outputs);
        let logits = self.out.forward(tape, hs);
        let log_probs = tape.log_softmax(logits);
        let next = &target[1..];
        let (rows, cols): (Vec<usize>, Vec<usize>) = next
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != PAD)
            .map(|(r, &t)| (r, t))
            .unzip();
        let picked = if rows.len() == next.len() {
            tape.pick(log_probs, &cols)
        } else {
            let kept: Vec<Var> = rows.iter().map(|&r| tape.slice_rows(log_probs, r, 1)).collect();
            let kept = tape.concat_rows(&kept);
            tape.pick(kept, &cols)
        };
        Ok(tape.sum(picked))
    }
}
