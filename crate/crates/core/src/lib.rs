//! Deep generative Markov model for semi-supervised norm recognition in
//! dialogue, together with a synthetic-corpus harness.
//!
//! Each turn carries a discrete norm latent `c` and a continuous latent `z`,
//! both conditioned on the latents of the previous turns. Training maximizes
//! per-turn evidence lower bounds on partially labeled dialogues.

pub mod corpus;
pub mod error;
pub mod evalsuite;
pub mod latentmath;
pub mod model;
pub mod objective;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
