use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::NUM_SPECIAL;
use crate::error::{Error, Result};

/// Which cross-turn links the model keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Latents conditioned on the previous `l` turns' latents.
    Normmark,
    /// Every cross-turn link severed.
    Zero,
    /// Normmark plus the previous turn's encoding fed to the inference nets.
    Extended,
    /// Latent links severed, previous turn's encoding kept.
    ZeroExtended,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Normmark,
        Variant::Zero,
        Variant::Extended,
        Variant::ZeroExtended,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Normmark => "normmark",
            Variant::Zero => "zero",
            Variant::Extended => "extended",
            Variant::ZeroExtended => "zero-extended",
        }
    }

    pub fn severed(self) -> bool {
        matches!(self, Variant::Zero | Variant::ZeroExtended)
    }

    pub fn extended(self) -> bool {
        matches!(self, Variant::Extended | Variant::ZeroExtended)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown variant `{s}` (expected normmark, zero, extended or zero-extended)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Pre-norm self-attention stack with learned positions.
    Attention,
    /// Mean of token embeddings through one tanh layer.
    Bag,
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(EncoderKind::Attention),
            "bag" => Ok(EncoderKind::Bag),
            _ => Err(Error::invalid(format!("unknown encoder `{s}`"))),
        }
    }
}

/// Form of the continuous-latent prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// `p(z_i | z_{i-1..i-l})` from a bias-free MLP; zero context gives `N(0, I)`.
    Conditional,
    /// `N(0, I)` for every turn.
    Standard,
}

impl FromStr for PriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(PriorMode::Conditional),
            "standard" => Ok(PriorMode::Standard),
            _ => Err(Error::invalid(format!("unknown prior mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub d_emb: usize,
    pub decoder_hidden: usize,
    pub window_length: usize,
    /// `0` severs every latent link (the `zero` variants).
    pub markov_order: usize,
    pub extended: bool,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub encoder: EncoderKind,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub prior_mode: PriorMode,
    /// Feed the one-hot straight-through value instead of the soft sample.
    pub straight_through: bool,
    /// Context for a labeled predecessor uses its gold label.
    pub teacher_force_labels: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            d_z: 16,
            d_h: 64,
            d_emb: 64,
            decoder_hidden: 128,
            window_length: 5,
            markov_order: 1,
            extended: false,
            vocab_size: NUM_SPECIAL,
            max_len: 64,
            dropout: 0.6,
            encoder: EncoderKind::Attention,
            encoder_layers: 2,
            encoder_heads: 4,
            prior_mode: PriorMode::Conditional,
            straight_through: false,
            teacher_force_labels: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("d_z", self.d_z),
            ("d_h", self.d_h),
            ("d_emb", self.d_emb),
            ("decoder_hidden", self.decoder_hidden),
            ("window_length", self.window_length),
            ("encoder_heads", self.encoder_heads),
        ] {
            if v < 1 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.vocab_size <= NUM_SPECIAL {
            return Err(Error::invalid(format!(
                "vocab_size {} has no room beyond the special tokens",
                self.vocab_size
            )));
        }
        if self.max_len < 3 {
            return Err(Error::invalid("max_len must be at least 3"));
        }
        if self.markov_order + 1 > self.window_length {
            return Err(Error::invalid(format!(
                "markov_order {} needs window_length >= {}",
                self.markov_order,
                self.markov_order + 1
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.encoder == EncoderKind::Attention && self.d_h % self.encoder_heads != 0 {
            return Err(Error::invalid(format!(
                "d_h {} not divisible by {} heads",
                self.d_h, self.encoder_heads
            )));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        match (self.markov_order == 0, self.extended) {
            (false, false) => Variant::Normmark,
            (true, false) => Variant::Zero,
            (false, true) => Variant::Extended,
            (true, true) => Variant::ZeroExtended,
        }
    }

    /// Applies a variant; connected variants use `order` (at least 1).
    pub fn set_variant(&mut self, variant: Variant, order: usize) {
        self.extended = variant.extended();
        self.markov_order = if variant.severed() { 0 } else { order.max(1) };
    }

    pub fn severed(&self) -> bool {
        self.markov_order == 0
    }

    /// Width of the context windows in turns. Severed variants keep a
    /// one-turn window of zeros so parameter shapes match order 1.
    pub fn context_order(&self) -> usize {
        self.markov_order.max(1)
    }
}
