//! Synthetic partially labeled corpora drawn from a known first-order label
//! chain with per-label token signatures.
//!
//! Vocabulary layout: words `w0 .. w{V-1}`. Label `k` owns the signature block
//! `[k·S, (k+1)·S)`; everything after the last block is shared noise. Each
//! token comes from the segment label's signature (uniform over the block)
//! with probability `signal_strength`, otherwise uniformly from the noise
//! block.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, LabelSet, Segment, SplitTag};
use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-9;
const STATIONARY_TOLERANCE: f64 = 1e-10;

/// Row-stochastic `K × K` matrix; row `i` is the next-label distribution
/// given current label `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::invalid("transition matrix needs K >= 2"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "transition matrix row",
                    expected: k,
                    actual: row.len(),
                });
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::invalid(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    /// Normalizes each row; rows summing to zero become uniform.
    pub fn from_counts(counts: &[Vec<f64>]) -> Result<Self> {
        let k = counts.len();
        let rows = counts
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter().map(|c| c / total).collect()
                } else {
                    vec![1.0 / k as f64; row.len()]
                }
            })
            .collect();
        Self::new(rows)
    }

    pub fn identity(k: usize) -> Self {
        let rows = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { rows }
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Per-row total variation distance to `other`.
    pub fn row_total_variation(&self, other: &TransitionMatrix) -> Vec<f64> {
        assert_eq!(self.k(), other.k(), "matrices of different size");
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| total_variation(a, b))
            .collect()
    }

    /// Stationary distribution by power iteration from uniform.
    pub fn stationary(&self) -> Vec<f64> {
        let k = self.k();
        let mut pi = vec![1.0 / k as f64; k];
        for _ in 0..100_000 {
            let mut next = vec![0.0; k];
            for (i, p) in pi.iter().enumerate() {
                for (j, t) in self.rows[i].iter().enumerate() {
                    next[j] += p * t;
                }
            }
            // Lazy step keeps periodic chains convergent; same fixed point.
            let next: Vec<f64> = next.iter().zip(&pi).map(|(n, p)| 0.5 * (n + p)).collect();
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < STATIONARY_TOLERANCE {
                break;
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter().map(|p| p / total).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(m: TransitionMatrix) -> Self {
        m.rows
    }
}

/// Half the L1 distance between two distributions.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub vocab_size: usize,
    pub num_dialogues: usize,
    pub segments_per_dialogue: usize,
    pub tokens_per_segment: usize,
    pub signal_strength: f64,
    pub transition_concentration: f64,
    pub label_rate: f64,
    /// Words per label signature block.
    pub signature_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            k: 4,
            vocab_size: 60,
            num_dialogues: 200,
            segments_per_dialogue: 10,
            tokens_per_segment: 4,
            signal_strength: 0.55,
            transition_concentration: 0.2,
            label_rate: 1.0,
            signature_size: 8,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("K must be at least 2"));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("num_dialogues", self.num_dialogues),
            ("segments_per_dialogue", self.segments_per_dialogue),
            ("tokens_per_segment", self.tokens_per_segment),
            ("signature_size", self.signature_size),
        ] {
            if v < 1 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.k * self.signature_size >= self.vocab_size {
            return Err(Error::invalid(format!(
                "vocab_size {} leaves no noise words after {} signatures of {}",
                self.vocab_size, self.k, self.signature_size
            )));
        }
        for (name, p) in [
            ("signal_strength", self.signal_strength),
            ("label_rate", self.label_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.transition_concentration > 0.0 && self.transition_concentration.is_finite()) {
            return Err(Error::invalid("transition_concentration must be positive"));
        }
        Ok(())
    }

    pub fn word(i: usize) -> String {
        format!("w{i}")
    }

    pub fn signature_support(&self, label: usize) -> std::ops::Range<usize> {
        label * self.signature_size..(label + 1) * self.signature_size
    }

    pub fn noise_support(&self) -> std::ops::Range<usize> {
        self.k * self.signature_size..self.vocab_size
    }
}

/// Everything the generator knew before masking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub transition: TransitionMatrix,
    pub initial: Vec<f64>,
    /// Signature distribution per label over the full synthetic vocabulary.
    pub signatures: Vec<Vec<f64>>,
    pub signature_supports: Vec<Vec<String>>,
    pub noise_support: Vec<String>,
    pub labels: Vec<DialogueLabels>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueLabels {
    pub id: String,
    pub labels: Vec<usize>,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Each row drawn from a symmetric Dirichlet(`concentration`).
pub fn sample_transition_matrix(k: usize, concentration: f64, seed: u64) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::invalid("K must be at least 2"));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::invalid(format!("concentration {concentration}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..k)
        .map(|_| {
            let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 {
                draws.iter().map(|d| d / total).collect()
            } else {
                let mut row = vec![0.0; k];
                row[rng.random_range(0..k)] = 1.0;
                row
            }
        })
        .collect();
    TransitionMatrix::new(rows)
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Generates a corpus with the spec's transition matrix sampled from its seed.
pub fn generate_corpus(spec: &SynthSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let transition =
        sample_transition_matrix(spec.k, spec.transition_concentration, spec.seed)?;
    generate_corpus_with(spec, &transition)
}

/// Generates a corpus from an explicit transition matrix.
pub fn generate_corpus_with(
    spec: &SynthSpec,
    transition: &TransitionMatrix,
) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    if transition.k() != spec.k {
        return Err(Error::DimensionMismatch {
            context: "transition matrix size",
            expected: spec.k,
            actual: transition.k(),
        });
    }
    let labels = LabelSet::first_k(spec.k)?;
    let initial = transition.stationary();
    let noise = spec.noise_support();

    let mut dialogues = Vec::with_capacity(spec.num_dialogues);
    let mut truth = Vec::with_capacity(spec.num_dialogues);
    for d in 0..spec.num_dialogues {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(d as u64));
        rng.set_stream(1);
        let mut chain = Vec::with_capacity(spec.segments_per_dialogue);
        let mut segments = Vec::with_capacity(spec.segments_per_dialogue);
        for t in 0..spec.segments_per_dialogue {
            let label = if t == 0 {
                draw_categorical(&mut rng, &initial)
            } else {
                draw_categorical(&mut rng, transition.row(chain[t - 1]))
            };
            chain.push(label);
            let block = spec.signature_support(label);
            let words: Vec<String> = (0..spec.tokens_per_segment)
                .map(|_| {
                    let id = if rng.random::<f64>() < spec.signal_strength {
                        rng.random_range(block.clone())
                    } else {
                        rng.random_range(noise.clone())
                    };
                    SynthSpec::word(id)
                })
                .collect();
            segments.push(Segment::new(words.join(" "), Some(label)));
        }
        let id = format!("syn{d:05}");
        truth.push(DialogueLabels {
            id: id.clone(),
            labels: chain,
        });
        dialogues.push(Dialogue { id, segments });
    }

    let full = Corpus::new(dialogues, labels, SplitTag::Full);
    let corpus = mask_labels(&full, spec.label_rate, spec.seed ^ 0x6d61_736b)?;

    let signatures = (0..spec.k)
        .map(|k| {
            let block = spec.signature_support(k);
            let p = 1.0 / block.len() as f64;
            (0..spec.vocab_size)
                .map(|w| if block.contains(&w) { p } else { 0.0 })
                .collect()
        })
        .collect();
    let ground_truth = GroundTruth {
        transition: transition.clone(),
        initial,
        signatures,
        signature_supports: (0..spec.k)
            .map(|k| spec.signature_support(k).map(SynthSpec::word).collect())
            .collect(),
        noise_support: noise.map(SynthSpec::word).collect(),
        labels: truth,
    };
    Ok((corpus, ground_truth))
}

/// Keeps each segment's label independently with probability `label_rate`.
pub fn mask_labels(corpus: &Corpus, label_rate: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&label_rate) {
        return Err(Error::invalid(format!("label_rate must lie in [0, 1], got {label_rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    for seg in out.dialogues.iter_mut().flat_map(|d| d.segments.iter_mut()) {
        let keep = rng.random::<f64>() < label_rate;
        if !keep {
            seg.label = None;
        }
    }
    Ok(out)
}

/// Label-bigram statistics of a corpus.
#[derive(Clone, Debug)]
pub struct EmpiricalTransitions {
    pub matrix: TransitionMatrix,
    pub counts: Vec<Vec<f64>>,
    /// Rows with no observed outgoing pair, reported as uniform.
    pub empty_rows: Vec<usize>,
}

/// Normalized counts over consecutive pairs where both segments are labeled.
pub fn empirical_transition_matrix(corpus: &Corpus) -> Result<EmpiricalTransitions> {
    let k = corpus.labels.len();
    let mut counts = vec![vec![0.0; k]; k];
    let mut pairs = 0usize;
    for d in &corpus.dialogues {
        for w in d.segments.windows(2) {
            if let (Some(a), Some(b)) = (w[0].label, w[1].label) {
                counts[a][b] += 1.0;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyCorpus("no consecutive labeled pairs".into()));
    }
    let empty_rows = (0..k)
        .filter(|&i| counts[i].iter().sum::<f64>() == 0.0)
        .collect();
    Ok(EmpiricalTransitions {
        matrix: TransitionMatrix::from_counts(&counts)?,
        counts,
        empty_rows,
    })
}
