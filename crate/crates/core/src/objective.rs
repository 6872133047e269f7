//! Per-turn evidence lower bounds and the semi-supervised training loss.
//!
//! Unlabeled turn:
//! `elbo = E_q[log p(s | z, c)] − KL(q_z ‖ p_z) − KL(q_c ‖ p_c)`.
//!
//! Labeled turn (gold `c`):
//! `elbo = E_q[log p(s | z, c)] − KL(q_z ‖ p_z) + log p(c | c_prev)`,
//! plus the classifier cross-entropy `−log q(c | s, c_prev)` added to the loss.
//!
//! The loss is `−(Σ_U elbo + λ Σ_L (elbo − w_ce · ce))`.

use serde::{Deserialize, Serialize};

use normmark_tape::{log_sum_exp, Tape, Var};

use crate::error::{Error, Result};
use crate::latentmath::graph::{self, GaussianVars};
use crate::latentmath::{argmax, one_hot, CategoricalParams, GaussianParams, NoiseSource};
use crate::model::{Model, Recon, TurnContext, TurnOutput};

/// Plain values of every term of one turn's bound. Terms that do not apply
/// to the turn's kind are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon: f64,
    pub kl_z: f64,
    pub kl_c: f64,
    pub label_prior: f64,
    pub classifier_ce: f64,
    pub elbo: f64,
}

/// The same terms as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct TurnElbo {
    pub recon: Var,
    pub kl_z: Var,
    pub kl_c: Option<Var>,
    pub label_prior: Option<Var>,
    pub classifier_ce: Option<Var>,
    pub elbo: Var,
}

impl TurnElbo {
    pub fn breakdown(&self, tape: &Tape<'_>) -> ElboBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        ElboBreakdown {
            recon: tape.scalar(self.recon),
            kl_z: tape.scalar(self.kl_z),
            kl_c: get(self.kl_c),
            label_prior: get(self.label_prior),
            classifier_ce: get(self.classifier_ce),
            elbo: tape.scalar(self.elbo),
        }
    }
}

fn recon_term(tape: &mut Tape<'_>, turn: &TurnOutput) -> Result<Var> {
    match &turn.recon {
        Recon::Sampled(v) => Ok(*v),
        Recon::Enumerated(per_class) => {
            let q = tape.softmax(turn.q_c);
            let stacked = tape.concat_cols(per_class);
            let weighted = tape.mul(q, stacked);
            Ok(tape.sum(weighted))
        }
        Recon::Skipped => Err(Error::invalid("turn was run without the decoder")),
    }
}

pub fn elbo_unlabeled(tape: &mut Tape<'_>, turn: &TurnOutput) -> Result<TurnElbo> {
    if turn.label_observed() {
        return Err(Error::invalid("elbo_unlabeled called on a labeled turn"));
    }
    let recon = recon_term(tape, turn)?;
    let kl_z = graph::gaussian_kl(tape, turn.q_z, turn.p_z);
    let kl_c = graph::categorical_kl(tape, turn.q_c, turn.p_c);
    let a = tape.sub(recon, kl_z);
    let elbo = tape.sub(a, kl_c);
    Ok(TurnElbo {
        recon,
        kl_z,
        kl_c: Some(kl_c),
        label_prior: None,
        classifier_ce: None,
        elbo,
    })
}

pub fn elbo_labeled(tape: &mut Tape<'_>, turn: &TurnOutput) -> Result<TurnElbo> {
    let gold = turn
        .label
        .ok_or_else(|| Error::invalid("elbo_labeled called on an unlabeled turn"))?;
    if matches!(turn.recon, Recon::Enumerated(_)) {
        return Err(Error::invalid("labeled turn must be scored at its gold label"));
    }
    let recon = recon_term(tape, turn)?;
    let kl_z = graph::gaussian_kl(tape, turn.q_z, turn.p_z);
    let lp = tape.log_softmax(turn.p_c);
    let label_prior = tape.pick(lp, &[gold]);
    let lq = tape.log_softmax(turn.q_c);
    let log_q = tape.pick(lq, &[gold]);
    let ce = tape.neg(log_q);
    let a = tape.sub(recon, kl_z);
    let elbo = tape.add(a, label_prior);
    Ok(TurnElbo {
        recon,
        kl_z,
        kl_c: None,
        label_prior: Some(label_prior),
        classifier_ce: Some(ce),
        elbo,
    })
}

/// Knobs of the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub weight_ce: f64,
    /// Multiplier on `kl_z` inside the loss (KL warm-up); reported terms
    /// are always unweighted.
    pub kl_z_weight: f64,
    /// Add the cross-entropy outside the `λ` factor.
    pub ce_outside_lambda: bool,
    /// Include unlabeled turns. When false they still provide context in the
    /// forward pass but contribute nothing to the loss.
    pub use_unlabeled: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            weight_ce: 1.0,
            kl_z_weight: 1.0,
            ce_outside_lambda: false,
            use_unlabeled: true,
        }
    }
}

/// Summed loss terms. Reports add under [`LossReport::merge`], so the report
/// of a concatenated batch equals the sum of the reports of its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub sum_unlabeled_elbo: f64,
    pub sum_labeled_elbo: f64,
    pub sum_classifier_ce: f64,
    pub recon: f64,
    pub kl_z: f64,
    pub kl_c: f64,
    pub lambda: f64,
    pub labeled_turns: usize,
    pub unlabeled_turns: usize,
    /// Unlabeled turns left out of the loss (labeled-only training).
    pub ignored_turns: usize,
    pub sequences: usize,
}

impl LossReport {
    pub fn merge(&mut self, other: &LossReport) {
        self.total += other.total;
        self.sum_unlabeled_elbo += other.sum_unlabeled_elbo;
        self.sum_labeled_elbo += other.sum_labeled_elbo;
        self.sum_classifier_ce += other.sum_classifier_ce;
        self.recon += other.recon;
        self.kl_z += other.kl_z;
        self.kl_c += other.kl_c;
        self.lambda = other.lambda;
        self.labeled_turns += other.labeled_turns;
        self.unlabeled_turns += other.unlabeled_turns;
        self.ignored_turns += other.ignored_turns;
        self.sequences += other.sequences;
    }

    /// Every summed quantity divided by the sequence count.
    pub fn per_sequence(&self) -> LossReport {
        let n = self.sequences.max(1) as f64;
        LossReport {
            total: self.total / n,
            sum_unlabeled_elbo: self.sum_unlabeled_elbo / n,
            sum_labeled_elbo: self.sum_labeled_elbo / n,
            sum_classifier_ce: self.sum_classifier_ce / n,
            recon: self.recon / n,
            kl_z: self.kl_z / n,
            kl_c: self.kl_c / n,
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.sum_unlabeled_elbo,
            self.sum_labeled_elbo,
            self.sum_classifier_ce,
            self.recon,
            self.kl_z,
            self.kl_c,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// One line of `loss.jsonl`.
    pub fn log_line(&self, step: u64) -> String {
        serde_json::json!({
            "step": step,
            "total": self.total,
            "recon": self.recon,
            "kl_z": self.kl_z,
            "kl_c": self.kl_c,
            "ce": self.sum_classifier_ce,
            "lambda": self.lambda,
        })
        .to_string()
    }
}

/// Loss of one window's turns as a `1 × 1` node, plus its report.
pub fn total_loss(
    tape: &mut Tape<'_>,
    turns: &[TurnOutput],
    weights: &LossWeights,
) -> Result<(Var, LossReport)> {
    if turns.is_empty() {
        return Err(Error::invalid("total_loss needs at least one turn"));
    }
    if !(weights.lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let mut report = LossReport {
        lambda: weights.lambda,
        sequences: 1,
        ..LossReport::default()
    };
    let mut objective: Vec<Var> = Vec::new();
    for turn in turns {
        if turn.label_observed() {
            let t = elbo_labeled(tape, turn)?;
            let b = t.breakdown(tape);
            report.labeled_turns += 1;
            report.sum_labeled_elbo += b.elbo;
            report.sum_classifier_ce += b.classifier_ce;
            report.recon += b.recon;
            report.kl_z += b.kl_z;
            let weighted = weighted_elbo(tape, &t, weights.kl_z_weight);
            let ce = t.classifier_ce.expect("labeled turn has a cross-entropy");
            let ce_scaled = tape.scale(ce, weights.weight_ce);
            if weights.ce_outside_lambda {
                let part = tape.scale(weighted, weights.lambda);
                objective.push(part);
                objective.push(tape.neg(ce_scaled));
            } else {
                let inner = tape.sub(weighted, ce_scaled);
                objective.push(tape.scale(inner, weights.lambda));
            }
        } else if weights.use_unlabeled {
            let t = elbo_unlabeled(tape, turn)?;
            let b = t.breakdown(tape);
            report.unlabeled_turns += 1;
            report.sum_unlabeled_elbo += b.elbo;
            report.recon += b.recon;
            report.kl_z += b.kl_z;
            report.kl_c += b.kl_c;
            objective.push(weighted_elbo(tape, &t, weights.kl_z_weight));
        } else {
            report.ignored_turns += 1;
        }
    }
    let mut acc = match objective.split_first() {
        Some((first, rest)) => rest.iter().fold(*first, |a, &b| tape.add(a, b)),
        None => tape.zeros(1, 1),
    };
    acc = tape.neg(acc);
    report.total = tape.scalar(acc);
    Ok((acc, report))
}

/// The bound with `kl_z` scaled by `w`; `w = 1` reproduces `elbo`.
fn weighted_elbo(tape: &mut Tape<'_>, t: &TurnElbo, w: f64) -> Var {
    if w == 1.0 {
        return t.elbo;
    }
    let kz = tape.scale(t.kl_z, w);
    let mut e = tape.sub(t.recon, kz);
    if let Some(kc) = t.kl_c {
        e = tape.sub(e, kc);
    }
    if let Some(lp) = t.label_prior {
        e = tape.add(e, lp);
    }
    e
}

/// One turn to score in isolation: its tokens, the plain context it is
/// conditioned on, and an optional observed label.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnInput {
    pub context: TurnContext,
    pub label: Option<usize>,
}

impl TurnInput {
    pub fn from_output(turn: &TurnOutput) -> Self {
        Self {
            context: turn.context.clone(),
            label: turn.label,
        }
    }
}

struct Proposal {
    q_c: CategoricalParams,
    p_c: CategoricalParams,
    q_z: GaussianParams,
    p_z: GaussianParams,
}

fn proposal(model: &Model, input: &TurnInput) -> Result<Proposal> {
    let mut tape = model.tape();
    let ctx = &input.context;
    let c_ctx = tape.row(&ctx.c_context);
    let z_ctx = tape.row(&ctx.z_context);
    let prev_h = ctx.prev_h.as_ref().map(|p| tape.row(p));
    let heads = model.turn_heads(&mut tape, &ctx.ids, c_ctx, z_ctx, prev_h, None)?;
    Ok(Proposal {
        q_c: CategoricalParams {
            logits: tape.row_vec(heads.q_c),
        },
        p_c: CategoricalParams {
            logits: tape.row_vec(heads.p_c),
        },
        q_z: heads.q_z.values(&tape),
        p_z: heads.p_z.values(&tape),
    })
}

fn log_weight(
    model: &Model,
    input: &TurnInput,
    prop: &Proposal,
    noise: &mut dyn NoiseSource,
) -> Result<f64> {
    let k = prop.q_c.k();
    // Exact categorical draw via the Gumbel-max trick.
    let g = noise.gumbel(k);
    let c = match input.label {
        Some(l) => l,
        None => {
            let perturbed: Vec<f64> = prop.q_c.logits.iter().zip(&g).map(|(a, b)| a + b).collect();
            argmax(&perturbed)
        }
    };
    let eps = noise.standard_normal(prop.q_z.dim());
    let z: Vec<f64> = prop
        .q_z
        .mean
        .iter()
        .zip(&prop.q_z.log_variance)
        .zip(&eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();

    let mut tape = model.tape();
    let zv = tape.row(&z);
    let cv = tape.row(&one_hot(k, c));
    let recon = model.decode_turn(&mut tape, zv, cv, &input.context.ids)?;
    let recon = tape.scalar(recon);
    let mut lw = recon + prop.p_z.log_density(&z) - prop.q_z.log_density(&z) + prop.p_c.log_probs()[c];
    if input.label.is_none() {
        lw -= prop.q_c.log_probs()[c];
    }
    Ok(lw)
}

/// Importance-weighted estimate of `log p(s | context)` (or `log p(s, c |
/// context)` for a labeled turn) with `S` draws from the inference networks.
///
/// Each draw consumes `K` Gumbel values and then `d_z` normals.
pub fn iw_loglik(model: &Model, input: &TurnInput, samples: usize, noise: &mut dyn NoiseSource) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("iw_loglik needs at least one sample"));
    }
    let prop = proposal(model, input)?;
    let weights = (0..samples)
        .map(|_| log_weight(model, input, &prop, noise))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(weights.iter().copied()) - (samples as f64).ln())
}

/// Single-draw Monte Carlo bound `log p(s, z, c) − log q(z, c)`; the
/// one-sample case of [`iw_loglik`] under the same noise.
pub fn sampled_elbo(model: &Model, input: &TurnInput, noise: &mut dyn NoiseSource) -> Result<f64> {
    let prop = proposal(model, input)?;
    log_weight(model, input, &prop, noise)
}

/// The training bound of one turn with a single `z` draw: analytic KLs and,
/// for unlabeled turns, exact enumeration over `c`.
pub fn turn_elbo(model: &Model, input: &TurnInput, noise: &mut dyn NoiseSource) -> Result<ElboBreakdown> {
    let mut tape = model.tape();
    let ctx = &input.context;
    let c_ctx = tape.row(&ctx.c_context);
    let z_ctx = tape.row(&ctx.z_context);
    let prev_h = ctx.prev_h.as_ref().map(|p| tape.row(p));
    let heads = model.turn_heads(&mut tape, &ctx.ids, c_ctx, z_ctx, prev_h, None)?;
    let k = model.config().num_classes;
    let eps = noise.standard_normal(model.config().d_z);
    let z = graph::gaussian_sample(&mut tape, heads.q_z, &eps);
    let (recon, c_value) = match input.label {
        Some(l) => {
            let c = tape.row(&one_hot(k, l));
            (Recon::Sampled(model.decode_turn(&mut tape, z, c, &ctx.ids)?), c)
        }
        None => {
            let per_class = (0..k)
                .map(|j| {
                    let e = tape.row(&one_hot(k, j));
                    model.decode_turn(&mut tape, z, e, &ctx.ids)
                })
                .collect::<Result<Vec<_>>>()?;
            let soft = tape.softmax(heads.q_c);
            (Recon::Enumerated(per_class), soft)
        }
    };
    let turn = TurnOutput {
        h: heads.h,
        q_c: heads.q_c,
        p_c: heads.p_c,
        q_z: heads.q_z,
        p_z: heads.p_z,
        z_sample: z,
        c_value,
        context_c: c_value,
        recon,
        label: input.label,
        context: ctx.clone(),
    };
    let t = match input.label {
        Some(_) => elbo_labeled(&mut tape, &turn)?,
        None => elbo_unlabeled(&mut tape, &turn)?,
    };
    Ok(t.breakdown(&tape))
}

/// Tape nodes for a hand-built turn, for callers that assemble turns
/// outside [`Model::forward_sequence`].
pub fn constant_turn(
    tape: &mut Tape<'_>,
    q_c: &[f64],
    p_c: &[f64],
    q_z: &GaussianParams,
    p_z: &GaussianParams,
    recon: ReconValues,
    label: Option<usize>,
) -> TurnOutput {
    let gauss = |tape: &mut Tape<'_>, g: &GaussianParams| GaussianVars {
        mean: tape.row(&g.mean),
        log_variance: tape.row(&g.log_variance),
    };
    let q_c_v = tape.row(q_c);
    let p_c_v = tape.row(p_c);
    let q_z_v = gauss(tape, q_z);
    let p_z_v = gauss(tape, p_z);
    let z = q_z_v.mean;
    let recon = match recon {
        ReconValues::Sampled(r) => Recon::Sampled(tape.row(&[r])),
        ReconValues::Enumerated(rs) => Recon::Enumerated(rs.iter().map(|r| tape.row(&[*r])).collect()),
    };
    let c_value = match label {
        Some(l) => tape.row(&one_hot(q_c.len(), l)),
        None => tape.softmax(q_c_v),
    };
    TurnOutput {
        h: tape.zeros(1, 1),
        q_c: q_c_v,
        p_c: p_c_v,
        q_z: q_z_v,
        p_z: p_z_v,
        z_sample: z,
        c_value,
        context_c: c_value,
        recon,
        label,
        context: TurnContext {
            ids: Vec::new(),
            c_context: Vec::new(),
            z_context: Vec::new(),
            prev_h: None,
        },
    }
}

/// Reconstruction values for [`constant_turn`].
#[derive(Clone, Debug, PartialEq)]
pub enum ReconValues {
    Sampled(f64),
    Enumerated(Vec<f64>),
}
