//! Distribution primitives for the continuous and discrete latents.
//!
//! Plain-`f64` functions here are the reference math; [`graph`] has the same
//! formulas recorded on a [`Tape`] for training. Noise is always passed in by
//! the caller, see [`NoiseSource`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use normmark_tape::{log_sum_exp, Tape, Var};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl GaussianParams {
    /// Validates finiteness and clamps the log-variance to `[-10, 10]`.
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::DimensionMismatch {
                context: "gaussian log_variance",
                expected: mean.len(),
                actual: log_variance.len(),
            });
        }
        if mean.iter().chain(&log_variance).any(|x| !x.is_finite()) {
            return Err(Error::invalid("gaussian parameters must be finite"));
        }
        let log_variance = log_variance
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(Self { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_variance)
            .zip(x)
            .map(|((m, lv), x)| -0.5 * (LN_2PI + lv + (x - m).powi(2) / lv.exp()))
            .sum()
    }
}

/// Categorical over `K` classes, parameterized by logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalParams {
    pub logits: Vec<f64>,
}

impl CategoricalParams {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::invalid("categorical needs at least one class"));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(Self { logits })
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().map(|p| p.ln().max(-1e300)).collect())
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let lse = log_sum_exp(self.logits.iter().copied());
        self.logits.iter().map(|l| l - lse).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs().into_iter().map(f64::exp).collect()
    }

    /// Most probable class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

/// A turn's pair of latents: continuous `z` and discrete `c` on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
}

impl LatentVector {
    pub fn new(z: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|x| *x < 0.0) || (c.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("c must lie on the simplex"));
        }
        Ok(Self { z, c })
    }
}

/// Lowest index of the maximum entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(k: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

/// `mean + exp(log_variance / 2) ⊙ noise`.
pub fn gaussian_sample(params: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            context: "gaussian noise",
            expected: params.dim(),
            actual: noise.len(),
        });
    }
    Ok(params
        .mean
        .iter()
        .zip(&params.log_variance)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Closed-form `KL(q || p)` for diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "gaussian kl",
            expected: q.dim(),
            actual: p.dim(),
        });
    }
    let kl = (0..q.dim())
        .map(|i| {
            let (mq, lq, mp, lp) = (q.mean[i], q.log_variance[i], p.mean[i], p.log_variance[i]);
            0.5 * (lp - lq + ((lq.exp() + (mq - mp).powi(2)) / lp.exp()) - 1.0)
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// `Σ_k q_k (log q_k − log p_k)` with `0 · log 0 = 0`.
pub fn categorical_kl(q: &CategoricalParams, p: &CategoricalParams) -> Result<f64> {
    if q.k() != p.k() {
        return Err(Error::DimensionMismatch {
            context: "categorical kl",
            expected: q.k(),
            actual: p.k(),
        });
    }
    let lq = q.log_probs();
    let lp = p.log_probs();
    let kl = lq
        .iter()
        .zip(&lp)
        .map(|(a, b)| {
            let w = a.exp();
            if w == 0.0 {
                0.0
            } else {
                w * (a - b)
            }
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// `softmax((logits + noise) / tau)`.
pub fn gumbel_softmax_sample(
    logits: &CategoricalParams,
    tau: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if noise.len() != logits.k() {
        return Err(Error::DimensionMismatch {
            context: "gumbel noise",
            expected: logits.k(),
            actual: noise.len(),
        });
    }
    let scaled: Vec<f64> = logits
        .logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / tau)
        .collect();
    Ok(CategoricalParams { logits: scaled }.probs())
}

/// One-hot at the argmax of `y_soft` (lowest index on ties).
pub fn straight_through(y_soft: &[f64]) -> Vec<f64> {
    one_hot(y_soft.len(), argmax(y_soft))
}

/// Source of the random draws every stochastic operation consumes.
pub trait NoiseSource {
    fn standard_normal(&mut self, n: usize) -> Vec<f64>;
    fn gumbel(&mut self, n: usize) -> Vec<f64>;
    /// Inverted-dropout mask: `1 / keep` with probability `keep`, else 0.
    fn dropout_mask(&mut self, n: usize, keep: f64) -> Vec<f64>;
}

/// Seeded ChaCha-backed noise.
#[derive(Clone, Debug)]
pub struct RngNoise {
    rng: ChaCha8Rng,
}

impl RngNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl NoiseSource for RngNoise {
    fn standard_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    fn gumbel(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = self.rng.random_range(f64::MIN_POSITIVE..1.0);
                -(-u.ln()).ln()
            })
            .collect()
    }

    fn dropout_mask(&mut self, n: usize, keep: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// All-zero noise: Gaussian samples collapse to the mean, Gumbel perturbations
/// vanish and dropout keeps everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self, n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    fn gumbel(&mut self, n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    fn dropout_mask(&mut self, n: usize, _keep: f64) -> Vec<f64> {
        vec![1.0; n]
    }
}

/// Tape-recorded versions of the primitives. Vectors are `1 × n` rows.
pub mod graph {
    use super::*;

    /// Gaussian parameters as tape nodes.
    #[derive(Clone, Copy, Debug)]
    pub struct GaussianVars {
        pub mean: Var,
        pub log_variance: Var,
    }

    impl GaussianVars {
        /// Builds from raw head outputs, clamping the log-variance.
        pub fn clamped(tape: &mut Tape<'_>, mean: Var, raw_log_variance: Var) -> Self {
            let log_variance = tape.clamp(raw_log_variance, LOG_VAR_MIN, LOG_VAR_MAX);
            Self { mean, log_variance }
        }

        pub fn standard(tape: &mut Tape<'_>, dim: usize) -> Self {
            Self {
                mean: tape.zeros(1, dim),
                log_variance: tape.zeros(1, dim),
            }
        }

        pub fn values(&self, tape: &Tape<'_>) -> GaussianParams {
            GaussianParams {
                mean: tape.row_vec(self.mean),
                log_variance: tape.row_vec(self.log_variance),
            }
        }
    }

    pub fn gaussian_sample(tape: &mut Tape<'_>, q: GaussianVars, noise: &[f64]) -> Var {
        let half = tape.scale(q.log_variance, 0.5);
        let std = tape.exp(half);
        let eps = tape.row(noise);
        let scaled = tape.mul(std, eps);
        tape.add(q.mean, scaled)
    }

    pub fn gaussian_kl(tape: &mut Tape<'_>, q: GaussianVars, p: GaussianVars) -> Var {
        // 0.5 Σ (lp − lq + (exp(lq) + (mq − mp)²) · exp(−lp) − 1)
        let diff = tape.sub(q.mean, p.mean);
        let sq = tape.mul(diff, diff);
        let var_q = tape.exp(q.log_variance);
        let num = tape.add(var_q, sq);
        let neg_lp = tape.neg(p.log_variance);
        let inv_var_p = tape.exp(neg_lp);
        let ratio = tape.mul(num, inv_var_p);
        let lv_gap = tape.sub(p.log_variance, q.log_variance);
        let inner = tape.add(lv_gap, ratio);
        let total = tape.sum(inner);
        let dim = tape.shape(q.mean).1 as f64;
        let half = tape.scale(total, 0.5);
        let offset = tape.row(&[-0.5 * dim]);
        tape.add(half, offset)
    }

    pub fn categorical_kl(tape: &mut Tape<'_>, q_logits: Var, p_logits: Var) -> Var {
        let lq = tape.log_softmax(q_logits);
        let lp = tape.log_softmax(p_logits);
        let q = tape.softmax(q_logits);
        let gap = tape.sub(lq, lp);
        let weighted = tape.mul(q, gap);
        tape.sum(weighted)
    }

    pub fn gumbel_softmax(tape: &mut Tape<'_>, logits: Var, tau: f64, noise: &[f64]) -> Var {
        let g = tape.row(noise);
        let perturbed = tape.add(logits, g);
        let scaled = tape.scale(perturbed, 1.0 / tau);
        tape.softmax(scaled)
    }

    /// Forward value is the one-hot argmax; gradients flow as if it were
    /// `y_soft`.
    pub fn straight_through(tape: &mut Tape<'_>, y_soft: Var) -> Var {
        let soft = tape.row_vec(y_soft);
        let hard = super::straight_through(&soft);
        let delta: Vec<f64> = hard.iter().zip(&soft).map(|(h, s)| h - s).collect();
        let shift = tape.row(&delta);
        tape.add(y_soft, shift)
    }

    /// `log N(x; q)` summed over dimensions.
    pub fn gaussian_log_density(tape: &mut Tape<'_>, q: GaussianVars, x: Var) -> Var {
        let diff = tape.sub(x, q.mean);
        let sq = tape.mul(diff, diff);
        let neg_lv = tape.neg(q.log_variance);
        let inv = tape.exp(neg_lv);
        let mahal = tape.mul(sq, inv);
        let inner = tape.add(mahal, q.log_variance);
        let total = tape.sum(inner);
        let dim = tape.shape(x).1 as f64;
        let scaled = tape.scale(total, -0.5);
        let offset = tape.row(&[-0.5 * dim * LN_2PI]);
        tape.add(scaled, offset)
    }
}
