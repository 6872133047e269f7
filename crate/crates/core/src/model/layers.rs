use ndarray::Array2;
use normmark_tape::{Matrix, ParamId, ParamStore, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

/// `x · W (+ b)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
    ) -> Self {
        let w = store.insert(format!("{name}.w"), xavier(rng, inputs, outputs));
        let b = bias.then(|| store.insert(format!("{name}.b"), Array2::zeros((1, outputs))));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Learned `1 × n` gain and bias around the tape's layer norm.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.insert(format!("{name}.gain"), Array2::ones((1, dim))),
            bias: store.insert(format!("{name}.bias"), Array2::zeros((1, dim))),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Concatenates `parts` (front = most recent) into a fixed-width row,
/// zero-padding missing slots.
pub(crate) fn padded_context(tape: &mut Tape<'_>, parts: &[Var], slots: usize, width: usize) -> Var {
    let mut cols: Vec<Var> = parts.iter().take(slots).copied().collect();
    let missing = slots - cols.len();
    if missing > 0 {
        cols.push(tape.zeros(1, missing * width));
    }
    if cols.len() == 1 {
        cols[0]
    } else {
        tape.concat_cols(&cols)
    }
}
