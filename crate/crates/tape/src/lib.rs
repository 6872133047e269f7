//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] walks the record
//! in reverse and returns [`Gradients`] keyed by the parameters of the
//! [`ParamStore`] the tape was built against. The operation set is the one a
//! small recurrent/attention model needs, nothing more.

mod check;
mod graph;
mod params;

pub use check::{check_gradients, evaluate, relative_error, GradCheckReport, Mismatch};
pub use graph::{log_sum_exp, Tape, Var};
pub use params::{Gradients, Matrix, ParamId, ParamStore};
