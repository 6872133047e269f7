//! On-disk checkpoints.
//!
//! Layout of a checkpoint directory:
//!
//! ```text
//! meta.json            model config, vocabulary hash, step, RNG state, flags
//! vocab.json           token list (index = id)
//! labels.txt           one label name per line
//! params/<name>.bin    one file per parameter tensor
//! ```
//!
//! Parameter names are the dotted names used in the model (for example
//! `encoder.layers.0.attn.q.w`). Each `.bin` file holds the row count and
//! column count as little-endian `u64`, followed by `rows * cols` little-endian
//! `f64` values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::corpus::{LabelSet, Vocabulary};
use crate::error::{Error, Result};

/// Enough to rebuild the trainer's random stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position of the stream, as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::invalid(format!("bad RNG word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub rng: RngState,
    /// Training switches worth recording (clipping norm, KL warm-up, ...).
    #[serde(default)]
    pub flags: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub labels: LabelSet,
    pub meta: CheckpointMeta,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn new(model: Model, vocab: Vocabulary, labels: LabelSet, step: u64, rng: RngState) -> Self {
        let meta = CheckpointMeta {
            config: model.config().clone(),
            vocab_hash: vocab.hash(),
            step,
            rng,
            flags: BTreeMap::new(),
        };
        Self {
            model,
            vocab,
            labels,
            meta,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let params_dir = dir.join("params");
        fs::create_dir_all(&params_dir).map_err(|e| Error::io(&params_dir, e))?;
        let meta_path = dir.join("meta.json");
        let meta = serde_json::to_string_pretty(&self.meta)?;
        fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;
        self.vocab.save(&dir.join("vocab.json"))?;
        self.labels.save(&dir.join("labels.txt"))?;
        for (_, name, value) in self.model.params().iter() {
            let path = params_dir.join(format!("{name}.bin"));
            fs::write(&path, encode_tensor(value)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta =
            serde_json::from_str(&text).map_err(|e| ckpt_err(&meta_path, e.to_string()))?;
        let vocab = Vocabulary::load(&dir.join("vocab.json"))?;
        if vocab.hash() != meta.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: meta.vocab_hash.clone(),
                actual: vocab.hash(),
            });
        }
        let labels = LabelSet::load(&dir.join("labels.txt"))?;
        if labels.len() != meta.config.num_classes {
            return Err(ckpt_err(dir, "label count disagrees with model config"));
        }

        // Build the architecture, then overwrite every tensor from disk.
        let mut model = Model::new(meta.config.clone(), 0)?;
        let params_dir = dir.join("params");
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let name = model.params().name(id).to_string();
            let path = params_dir.join(format!("{name}.bin"));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let value = decode_tensor(&bytes).ok_or_else(|| ckpt_err(&path, "malformed tensor"))?;
            let slot = model.params_mut().get_mut(id);
            if slot.dim() != value.dim() {
                return Err(ckpt_err(
                    &path,
                    format!("shape {:?}, expected {:?}", value.dim(), slot.dim()),
                ));
            }
            slot.assign(&value);
        }
        let expected = model.params().len();
        let on_disk = fs::read_dir(&params_dir)
            .map_err(|e| Error::io(&params_dir, e))?
            .filter(|e| {
                e.as_ref()
                    .map(|e| e.path().extension().is_some_and(|x| x == "bin"))
                    .unwrap_or(false)
            })
            .count();
        if on_disk != expected {
            return Err(ckpt_err(
                &params_dir,
                format!("{on_disk} tensors on disk, model has {expected}"),
            ));
        }
        Ok(Self {
            model,
            vocab,
            labels,
            meta,
        })
    }
}

fn encode_tensor(value: &Array2<f64>) -> Vec<u8> {
    let (r, c) = value.dim();
    let mut out = Vec::with_capacity(16 + 8 * r * c);
    out.extend_from_slice(&(r as u64).to_le_bytes());
    out.extend_from_slice(&(c as u64).to_le_bytes());
    for v in value.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_tensor(bytes: &[u8]) -> Option<Array2<f64>> {
    let word = |i: usize| -> Option<[u8; 8]> { bytes.get(8 * i..8 * i + 8)?.try_into().ok() };
    let r = u64::from_le_bytes(word(0)?) as usize;
    let c = u64::from_le_bytes(word(1)?) as usize;
    let n = r.checked_mul(c)?;
    if bytes.len() != 16 + 8 * n {
        return None;
    }
    let data = (0..n)
        .map(|i| word(2 + i).map(f64::from_le_bytes))
        .collect::<Option<Vec<_>>>()?;
    Array2::from_shape_vec((r, c), data).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_bytes_round_trip() {
        let m = Array2::from_shape_fn((3, 2), |(i, j)| i as f64 * 0.5 - j as f64 / 3.0);
        let bytes = encode_tensor(&m);
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(decode_tensor(&bytes).unwrap(), m);
        assert!(decode_tensor(&bytes[..20]).is_none());
    }

    #[test]
    fn rng_state_resumes_stream() {
        use rand::{RngCore, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            rng.next_u64();
        }
        let state = RngState::capture(9, &rng);
        let mut resumed = state.restore().unwrap();
        assert_eq!(rng.next_u64(), resumed.next_u64());
    }
}
