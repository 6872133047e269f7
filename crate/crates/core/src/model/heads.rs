use normmark_tape::{ParamStore, Tape, Var};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, PriorMode};
use super::layers::Linear;
use crate::error::{Error, Result};
use crate::latentmath::graph::GaussianVars;

fn expect_width(tape: &Tape<'_>, v: Var, width: usize, context: &'static str) -> Result<()> {
    let actual = tape.shape(v).1;
    if tape.shape(v).0 != 1 || actual != width {
        return Err(Error::DimensionMismatch {
            context,
            expected: width,
            actual,
        });
    }
    Ok(())
}

/// Inputs the inference networks see besides the current turn's encoding.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierContext {
    /// Previous labels, concatenated and zero-padded (`1 × K·l`).
    pub labels: Var,
    /// Previous turn's encoding, extended variants only.
    pub prev_h: Option<Var>,
}

/// `q(c_i | s_i, c_{<i})`: two-layer tanh MLP over `[h, E·c_ctx, h_prev?]`.
#[derive(Clone, Debug)]
pub(crate) struct Classifier {
    label_proj: Linear,
    fc1: Linear,
    fc2: Linear,
    d_h: usize,
    ctx_width: usize,
    extended: bool,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let ctx_width = cfg.num_classes * cfg.context_order();
        let extra = if cfg.extended { cfg.d_h } else { 0 };
        Self {
            label_proj: Linear::new(store, rng, "classifier.label_proj", ctx_width, cfg.d_emb, false),
            fc1: Linear::new(store, rng, "classifier.fc1", cfg.d_h + cfg.d_emb + extra, cfg.d_h, true),
            fc2: Linear::new(store, rng, "classifier.fc2", cfg.d_h, cfg.num_classes, true),
            d_h: cfg.d_h,
            ctx_width,
            extended: cfg.extended,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, h: Var, ctx: ClassifierContext) -> Result<Var> {
        expect_width(tape, h, self.d_h, "classifier h")?;
        expect_width(tape, ctx.labels, self.ctx_width, "classifier label context")?;
        let emb = self.label_proj.forward(tape, ctx.labels);
        let mut parts = vec![h, emb];
        match (self.extended, ctx.prev_h) {
            (true, Some(p)) => {
                expect_width(tape, p, self.d_h, "classifier previous h")?;
                parts.push(p);
            }
            (false, None) => {}
            _ => return Err(Error::invalid("previous-turn encoding required iff extended")),
        }
        let x = tape.concat_cols(&parts);
        let hidden = self.fc1.forward(tape, x);
        let hidden = tape.tanh(hidden);
        Ok(self.fc2.forward(tape, hidden))
    }
}

/// `q(z_i | s_i, z_{<i})`: shared tanh layer with mean and log-variance heads.
#[derive(Clone, Debug)]
pub(crate) struct Posterior {
    fc1: Linear,
    mean: Linear,
    log_var: Linear,
    d_h: usize,
    ctx_width: usize,
    extended: bool,
}

impl Posterior {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let ctx_width = cfg.d_z * cfg.context_order();
        let extra = if cfg.extended { cfg.d_h } else { 0 };
        Self {
            fc1: Linear::new(store, rng, "posterior.fc1", cfg.d_h + ctx_width + extra, cfg.d_h, true),
            mean: Linear::new(store, rng, "posterior.mean", cfg.d_h, cfg.d_z, true),
            log_var: Linear::new(store, rng, "posterior.log_var", cfg.d_h, cfg.d_z, true),
            d_h: cfg.d_h,
            ctx_width,
            extended: cfg.extended,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        h: Var,
        z_ctx: Var,
        prev_h: Option<Var>,
    ) -> Result<GaussianVars> {
        expect_width(tape, h, self.d_h, "posterior h")?;
        expect_width(tape, z_ctx, self.ctx_width, "posterior z context")?;
        let mut parts = vec![h, z_ctx];
        match (self.extended, prev_h) {
            (true, Some(p)) => {
                expect_width(tape, p, self.d_h, "posterior previous h")?;
                parts.push(p);
            }
            (false, None) => {}
            _ => return Err(Error::invalid("previous-turn encoding required iff extended")),
        }
        let x = tape.concat_cols(&parts);
        let hidden = self.fc1.forward(tape, x);
        let hidden = tape.tanh(hidden);
        let mean = self.mean.forward(tape, hidden);
        let raw = self.log_var.forward(tape, hidden);
        Ok(GaussianVars::clamped(tape, mean, raw))
    }
}

/// `p(z_i | z_{<i})`. Bias-free, so an all-zero context yields `N(0, I)`.
#[derive(Clone, Debug)]
pub(crate) struct PriorZ {
    fc1: Linear,
    mean: Linear,
    log_var: Linear,
    mode: PriorMode,
    d_z: usize,
    ctx_width: usize,
}

impl PriorZ {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let ctx_width = cfg.d_z * cfg.context_order();
        Self {
            fc1: Linear::new(store, rng, "prior_z.fc1", ctx_width, cfg.d_h, false),
            mean: Linear::new(store, rng, "prior_z.mean", cfg.d_h, cfg.d_z, false),
            log_var: Linear::new(store, rng, "prior_z.log_var", cfg.d_h, cfg.d_z, false),
            mode: cfg.prior_mode,
            d_z: cfg.d_z,
            ctx_width,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, z_ctx: Var) -> Result<GaussianVars> {
        expect_width(tape, z_ctx, self.ctx_width, "prior z context")?;
        if self.mode == PriorMode::Standard {
            return Ok(GaussianVars::standard(tape, self.d_z));
        }
        let hidden = self.fc1.forward(tape, z_ctx);
        let hidden = tape.tanh(hidden);
        let mean = self.mean.forward(tape, hidden);
        let raw = self.log_var.forward(tape, hidden);
        Ok(GaussianVars::clamped(tape, mean, raw))
    }
}

/// `p(c_i | c_{<i})`: tanh MLP with a softmax on top (logits returned).
#[derive(Clone, Debug)]
pub(crate) struct PriorC {
    fc1: Linear,
    out: Linear,
    ctx_width: usize,
}

impl PriorC {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let ctx_width = cfg.num_classes * cfg.context_order();
        Self {
            fc1: Linear::new(store, rng, "prior_c.fc1", ctx_width, cfg.d_h, true),
            out: Linear::new(store, rng, "prior_c.out", cfg.d_h, cfg.num_classes, true),
            ctx_width,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, c_ctx: Var) -> Result<Var> {
        expect_width(tape, c_ctx, self.ctx_width, "prior c context")?;
        let hidden = self.fc1.forward(tape, c_ctx);
        let hidden = tape.tanh(hidden);
        Ok(self.out.forward(tape, hidden))
    }
}
