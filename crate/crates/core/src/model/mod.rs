//! The per-turn networks and their Markov chaining across a window.
//!
//! For each turn `i` of a window the model encodes the tokens into `h_i`,
//! infers `q(c_i | s_i, c_{<i})` and `q(z_i | s_i, z_{<i})`, evaluates the
//! priors `p(c_i | c_{<i})` and `p(z_i | z_{<i})` from the previous `l`
//! turns' latents, and scores the turn with a decoder conditioned on
//! `(z_i, c_i)`. Which links exist is controlled by [`Variant`].

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod heads;
mod layers;

use std::collections::VecDeque;

use normmark_tape::{ParamId, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, CheckpointMeta, RngState};
pub use config::{EncoderKind, ModelConfig, PriorMode, Variant};
pub use heads::ClassifierContext;

use crate::corpus::{encode_segment, SegmentSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::latentmath::graph::{self, GaussianVars};
use crate::latentmath::{argmax, one_hot, CategoricalParams, GaussianParams, NoiseSource};
use decoder::Decoder;
use encoder::Encoder;
use heads::{Classifier, Posterior, PriorC, PriorZ};

/// Name prefix of every parameter in the turn encoder.
pub const ENCODER_PREFIX: &str = "encoder.";

/// One turn as token ids (`BOS … EOS`) plus its optional gold label.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTurn {
    pub ids: Vec<usize>,
    pub label: Option<usize>,
}

/// A window ready for the model. Padding turns are dropped at encoding time,
/// so a padded window is shorter than `window_length`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    pub turns: Vec<EncodedTurn>,
    pub padded: bool,
}

impl EncodedSequence {
    pub fn without_labels(&self) -> Self {
        Self {
            turns: self
                .turns
                .iter()
                .map(|t| EncodedTurn {
                    ids: t.ids.clone(),
                    label: None,
                })
                .collect(),
            padded: self.padded,
        }
    }

    pub fn golds(&self) -> Vec<Option<usize>> {
        self.turns.iter().map(|t| t.label).collect()
    }
}

/// Windows encoded against one vocabulary, tagged with its hash.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCorpus {
    pub vocab_hash: String,
    pub sequences: Vec<EncodedSequence>,
}

pub fn encode_sequence(seq: &SegmentSequence, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    let turns: Vec<EncodedTurn> = seq
        .scoring()
        .map(|s| EncodedTurn {
            ids: encode_segment(s, vocab, max_len),
            label: s.label,
        })
        .collect();
    EncodedSequence {
        padded: turns.len() < seq.segments.len(),
        turns,
    }
}

pub fn encode_sequences(seqs: &[SegmentSequence], vocab: &Vocabulary, max_len: usize) -> EncodedCorpus {
    EncodedCorpus {
        vocab_hash: vocab.hash(),
        sequences: seqs.iter().map(|s| encode_sequence(s, vocab, max_len)).collect(),
    }
}

/// How a forward pass treats randomness, labels and scoring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Sample `z` and Gumbel-relax `c`; otherwise posterior mean and argmax.
    pub stochastic: bool,
    pub dropout: bool,
    pub tau: f64,
    /// Run the decoder.
    pub decode: bool,
    /// Score unlabeled turns exactly over every class instead of sampling `c`.
    pub enumerate: bool,
    /// Use gold labels where present.
    pub use_gold: bool,
}

impl RunOptions {
    pub fn train(tau: f64) -> Self {
        Self {
            stochastic: true,
            dropout: true,
            tau,
            decode: true,
            enumerate: false,
            use_gold: true,
        }
    }

    /// Deterministic scoring with gold labels.
    pub fn eval() -> Self {
        Self {
            stochastic: false,
            dropout: false,
            tau: 1.0,
            decode: true,
            enumerate: false,
            use_gold: true,
        }
    }

    /// Deterministic, label-blind, no decoder.
    pub fn predict() -> Self {
        Self {
            decode: false,
            use_gold: false,
            ..Self::eval()
        }
    }
}

/// The reconstruction term of a turn.
#[derive(Clone, Debug)]
pub enum Recon {
    /// `log p(s | z, c)` at the sampled/fed `c`.
    Sampled(Var),
    /// `log p(s | z, e_k)` for every class `k`.
    Enumerated(Vec<Var>),
    Skipped,
}

/// Plain values of the context a turn was computed under.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnContext {
    pub ids: Vec<usize>,
    pub c_context: Vec<f64>,
    pub z_context: Vec<f64>,
    pub prev_h: Option<Vec<f64>>,
}

/// Everything a forward pass computes for one turn, as tape nodes.
#[derive(Clone, Debug)]
pub struct TurnOutput {
    pub h: Var,
    pub q_c: Var,
    pub p_c: Var,
    pub q_z: GaussianVars,
    pub p_z: GaussianVars,
    pub z_sample: Var,
    /// Value fed to the decoder: gold one-hot when labeled.
    pub c_value: Var,
    /// Value carried into the next turns' label context.
    pub context_c: Var,
    pub recon: Recon,
    pub label: Option<usize>,
    pub context: TurnContext,
}

impl TurnOutput {
    pub fn label_observed(&self) -> bool {
        self.label.is_some()
    }

    pub fn q_c_params(&self, tape: &Tape<'_>) -> CategoricalParams {
        CategoricalParams {
            logits: tape.row_vec(self.q_c),
        }
    }

    pub fn p_c_params(&self, tape: &Tape<'_>) -> CategoricalParams {
        CategoricalParams {
            logits: tape.row_vec(self.p_c),
        }
    }

    pub fn q_z_params(&self, tape: &Tape<'_>) -> GaussianParams {
        self.q_z.values(tape)
    }

    pub fn p_z_params(&self, tape: &Tape<'_>) -> GaussianParams {
        self.p_z.values(tape)
    }

    /// Reconstruction log-likelihood; the `q_c`-weighted mean when enumerated.
    pub fn recon_loglik(&self, tape: &Tape<'_>) -> Option<f64> {
        match &self.recon {
            Recon::Sampled(v) => Some(tape.scalar(*v)),
            Recon::Enumerated(per_class) => {
                let q = self.q_c_params(tape).probs();
                Some(per_class.iter().zip(&q).map(|(r, w)| w * tape.scalar(*r)).sum())
            }
            Recon::Skipped => None,
        }
    }
}

/// The distributions of one turn given an explicit context.
#[derive(Clone, Copy, Debug)]
pub struct TurnHeads {
    pub h: Var,
    pub q_c: Var,
    pub p_c: Var,
    pub q_z: GaussianVars,
    pub p_z: GaussianVars,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    classifier: Classifier,
    posterior: Posterior,
    prior_z: PriorZ,
    prior_c: PriorC,
    decoder: Decoder,
}

impl Model {
    /// Builds a model with freshly initialized parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &mut rng, &config);
        let classifier = Classifier::new(&mut params, &mut rng, &config);
        let posterior = Posterior::new(&mut params, &mut rng, &config);
        let prior_z = PriorZ::new(&mut params, &mut rng, &config);
        let prior_c = PriorC::new(&mut params, &mut rng, &config);
        let decoder = Decoder::new(&mut params, &mut rng, &config);
        Ok(Self {
            config,
            params,
            encoder,
            classifier,
            posterior,
            prior_z,
            prior_c,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn is_encoder_param(&self, id: ParamId) -> bool {
        self.params.name(id).starts_with(ENCODER_PREFIX)
    }

    /// Replaces every parameter value, keeping names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::invalid("parameter sets differ in size"));
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            let src = other
                .id(&name)
                .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
            let value = other.get(src);
            if value.dim() != self.params.get(id).dim() {
                return Err(Error::invalid(format!("shape mismatch for `{name}`")));
            }
            self.params.get_mut(id).assign(value);
        }
        Ok(())
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.params)
    }

    /// `h` for one turn; input dropout iff a noise source is supplied.
    pub fn encode_turn(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        dropout: Option<&mut (dyn NoiseSource + '_)>,
    ) -> Result<Var> {
        self.encoder.encode(tape, ids, dropout)
    }

    pub fn classify_norm(&self, tape: &mut Tape<'_>, h: Var, ctx: ClassifierContext) -> Result<Var> {
        self.classifier.forward(tape, h, ctx)
    }

    pub fn posterior_z(
        &self,
        tape: &mut Tape<'_>,
        h: Var,
        z_ctx: Var,
        prev_h: Option<Var>,
    ) -> Result<GaussianVars> {
        self.posterior.forward(tape, h, z_ctx, prev_h)
    }

    pub fn prior_z(&self, tape: &mut Tape<'_>, z_ctx: Var) -> Result<GaussianVars> {
        self.prior_z.forward(tape, z_ctx)
    }

    pub fn prior_c(&self, tape: &mut Tape<'_>, c_ctx: Var) -> Result<Var> {
        self.prior_c.forward(tape, c_ctx)
    }

    pub fn decode_turn(&self, tape: &mut Tape<'_>, z: Var, c: Var, target: &[usize]) -> Result<Var> {
        self.decoder.log_likelihood(tape, z, c, target)
    }

    /// Width of the label context (`K · l`).
    pub fn c_context_width(&self) -> usize {
        self.config.num_classes * self.config.context_order()
    }

    /// Width of the continuous-latent context (`d_z · l`).
    pub fn z_context_width(&self) -> usize {
        self.config.d_z * self.config.context_order()
    }

    /// Encoder, inference nets and priors of one turn under a given context.
    pub fn turn_heads(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        c_ctx: Var,
        z_ctx: Var,
        prev_h: Option<Var>,
        dropout: Option<&mut (dyn NoiseSource + '_)>,
    ) -> Result<TurnHeads> {
        let h = self.encode_turn(tape, ids, dropout)?;
        let q_c = self.classify_norm(
            tape,
            h,
            ClassifierContext {
                labels: c_ctx,
                prev_h,
            },
        )?;
        let q_z = self.posterior_z(tape, h, z_ctx, prev_h)?;
        let p_z = self.prior_z(tape, z_ctx)?;
        let p_c = self.prior_c(tape, c_ctx)?;
        Ok(TurnHeads {
            h,
            q_c,
            p_c,
            q_z,
            p_z,
        })
    }

    /// Runs the model over one window, left to right.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape<'_>,
        seq: &EncodedSequence,
        opts: &RunOptions,
        noise: &mut dyn NoiseSource,
    ) -> Result<Vec<TurnOutput>> {
        let cfg = &self.config;
        let n = seq.turns.len();
        if n == 0 || n > cfg.window_length || (!seq.padded && n != cfg.window_length) {
            return Err(Error::DimensionMismatch {
                context: "sequence length (window_length)",
                expected: cfg.window_length,
                actual: n,
            });
        }
        if !(opts.tau > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let k = cfg.num_classes;
        let order = cfg.context_order();
        let mut c_hist: VecDeque<Var> = VecDeque::with_capacity(order);
        let mut z_hist: VecDeque<Var> = VecDeque::with_capacity(order);
        let mut prev_h: Option<Var> = None;
        let mut outputs = Vec::with_capacity(n);

        for turn in &seq.turns {
            if let Some(l) = turn.label {
                if l >= k {
                    return Err(Error::invalid(format!("label {l} outside {k} classes")));
                }
            }
            let (c_ctx, z_ctx) = if cfg.severed() {
                (tape.zeros(1, k * order), tape.zeros(1, cfg.d_z * order))
            } else {
                let c: Vec<Var> = c_hist.iter().copied().collect();
                let z: Vec<Var> = z_hist.iter().copied().collect();
                (
                    layers::padded_context(tape, &c, order, k),
                    layers::padded_context(tape, &z, order, cfg.d_z),
                )
            };
            let prev_in = cfg
                .extended
                .then(|| prev_h.unwrap_or_else(|| tape.zeros(1, cfg.d_h)));
            let context = TurnContext {
                ids: turn.ids.clone(),
                c_context: tape.row_vec(c_ctx),
                z_context: tape.row_vec(z_ctx),
                prev_h: prev_in.map(|p| tape.row_vec(p)),
            };

            let dropout = (opts.dropout && cfg.dropout > 0.0).then_some(&mut *noise);
            let heads = self.turn_heads(tape, &turn.ids, c_ctx, z_ctx, prev_in, dropout)?;

            let label = if opts.use_gold { turn.label } else { None };
            let inferred = |tape: &mut Tape<'_>, noise: &mut dyn NoiseSource| -> Var {
                if opts.enumerate {
                    tape.softmax(heads.q_c)
                } else if opts.stochastic {
                    let g = noise.gumbel(k);
                    let soft = graph::gumbel_softmax(tape, heads.q_c, opts.tau, &g);
                    if cfg.straight_through {
                        graph::straight_through(tape, soft)
                    } else {
                        soft
                    }
                } else {
                    let hard = one_hot(k, argmax(&tape.row_vec(heads.q_c)));
                    tape.row(&hard)
                }
            };
            let (c_value, context_c) = match label {
                Some(l) => {
                    let gold = tape.row(&one_hot(k, l));
                    let ctx = if cfg.teacher_force_labels {
                        gold
                    } else {
                        inferred(tape, noise)
                    };
                    (gold, ctx)
                }
                None => {
                    let v = inferred(tape, noise);
                    (v, v)
                }
            };

            let z_sample = if opts.stochastic {
                let eps = noise.standard_normal(cfg.d_z);
                graph::gaussian_sample(tape, heads.q_z, &eps)
            } else {
                heads.q_z.mean
            };

            let recon = if !opts.decode {
                Recon::Skipped
            } else if opts.enumerate && label.is_none() {
                let per_class = (0..k)
                    .map(|j| {
                        let e = tape.row(&one_hot(k, j));
                        self.decode_turn(tape, z_sample, e, &turn.ids)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Recon::Enumerated(per_class)
            } else {
                Recon::Sampled(self.decode_turn(tape, z_sample, c_value, &turn.ids)?)
            };

            c_hist.push_front(context_c);
            z_hist.push_front(z_sample);
            c_hist.truncate(order);
            z_hist.truncate(order);
            prev_h = Some(heads.h);

            outputs.push(TurnOutput {
                h: heads.h,
                q_c: heads.q_c,
                p_c: heads.p_c,
                q_z: heads.q_z,
                p_z: heads.p_z,
                z_sample,
                c_value,
                context_c,
                recon,
                label,
                context,
            });
        }
        Ok(outputs)
    }

    /// Label-blind argmax predictions for one window.
    pub fn predict_sequence(&self, seq: &EncodedSequence) -> Result<Vec<usize>> {
        let mut tape = self.tape();
        let blind = seq.without_labels();
        let turns = self.forward_sequence(&mut tape, &blind, &RunOptions::predict(), &mut crate::latentmath::ZeroNoise)?;
        Ok(turns
            .iter()
            .map(|t| argmax(&tape.row_vec(t.q_c)))
            .collect())
    }

    /// `softmax(p(c | one-hot j))` for the most recent slot, older slots zero.
    pub fn transition_prior(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.config.num_classes;
        let width = self.c_context_width();
        (0..k)
            .map(|j| {
                let mut tape = self.tape();
                let mut ctx = vec![0.0; width];
                ctx[j] = 1.0;
                let c = tape.row(&ctx);
                let logits = self.prior_c(&mut tape, c)?;
                Ok(CategoricalParams {
                    logits: tape.row_vec(logits),
                }
                .probs())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
