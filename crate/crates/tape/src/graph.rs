use ndarray::{s, Array2, Axis};

use crate::params::{Gradients, Matrix, ParamId, ParamStore};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Matrix>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Records a computation over dense matrices for reverse-mode differentiation.
///
/// Every value is a 2-D `f64` matrix; vectors are `1 × n` rows. Parameters are
/// read from a borrowed [`ParamStore`] and materialized at most once per tape.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar node");
        m[[0, 0]]
    }

    /// First row of a node as an owned vector.
    pub fn row_vec(&self, v: Var) -> Vec<f64> {
        self.value(v).row(0).to_vec()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|&i| self.tracked(i));
        self.push(value, op, tracked)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// A detached copy of `v`: same value, no gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul shape mismatch: {ar}x{ac} · {br}x{bc}");
        let value = self.value(a).dot(self.value(b));
        self.push_op(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        self.push_op(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(row), (1, ac), "add_row shape mismatch");
        let value = self.value(a) + self.value(row);
        self.push_op(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let value = self.value(a) - self.value(b);
        self.push_op(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let value = self.value(a) * self.value(b);
        self.push_op(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push_op(value, Op::Scale(a, factor), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push_op(value, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push_op(value, Op::Sigmoid(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| {
            let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
            0.5 * x * (1.0 + t)
        });
        self.push_op(value, Op::Gelu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push_op(value, Op::Exp(a), &[a])
    }

    /// Elementwise clamp; gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push_op(value, Op::Clamp(a, lo, hi), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|x| (x - lse).exp());
        }
        self.push_op(value, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|x| x - lse);
        }
        self.push_op(value, Op::LogSoftmax(a), &[a])
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push_op(Array2::from_elem((1, 1), total), Op::Sum(a), &[a])
    }

    /// Column means over rows: `T × n → 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, _) = self.shape(a);
        assert!(r > 0, "mean_rows on empty matrix");
        let value = self.value(a).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        self.push_op(value, Op::MeanRows(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let views: Vec<_> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, rows, "concat_cols row mismatch");
                self.value(p).view()
            })
            .collect();
        let value = ndarray::concatenate(Axis(1), &views).unwrap();
        self.push_op(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        let views: Vec<_> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).1, cols, "concat_rows column mismatch");
                self.value(p).view()
            })
            .collect();
        let value = ndarray::concatenate(Axis(0), &views).unwrap();
        self.push_op(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (_, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols out of range");
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push_op(value, Op::SliceCols(a, start), &[a])
    }

    /// Rows `start .. start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, _) = self.shape(a);
        assert!(start + len <= r, "slice_rows out of range");
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push_op(value, Op::SliceRows(a, start), &[a])
    }

    /// Embedding lookup: output row `i` is row `indices[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let (r, c) = self.shape(table);
        let src = self.value(table);
        let mut value = Array2::zeros((indices.len(), c));
        for (i, &idx) in indices.iter().enumerate() {
            assert!(idx < r, "gather_rows index {idx} out of range {r}");
            value.row_mut(i).assign(&src.row(idx));
        }
        self.push_op(value, Op::GatherRows(table, indices.to_vec()), &[table])
    }

    /// Output `T × 1` with entry `i` equal to `a[i, cols[i]]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, cols.len(), "pick needs one column per row");
        let src = self.value(a);
        let mut value = Array2::zeros((r, 1));
        for (i, &j) in cols.iter().enumerate() {
            assert!(j < c, "pick column {j} out of range {c}");
            value[[i, 0]] = src[[i, j]];
        }
        self.push_op(value, Op::Pick(a, cols.to_vec()), &[a])
    }

    /// Row-wise layer normalization with learned `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (rows, cols) = self.shape(x);
        assert_eq!(self.shape(gain), (1, cols), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, cols), "layer_norm bias shape");
        let mut normed = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(rows);
        for mut row in normed.rows_mut() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let value = &normed * self.value(gain) + self.value(bias);
        self.push_op(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Unmasked multi-head scaled dot-product attention over one sequence.
    ///
    /// `q`, `k`, `v` are `T × d`; heads split the columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (t, d) = self.shape(q);
        assert_eq!(self.shape(k), (t, d), "attention key shape");
        assert_eq!(self.shape(v), (t, d), "attention value shape");
        assert!(heads > 0 && d % heads == 0, "d={d} not divisible by {heads} heads");
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qh = self.value(q).slice(cols);
            let kh = self.value(k).slice(cols);
            let vh = self.value(v).slice(cols);
            let mut p = qh.dot(&kh.t()) * scale;
            for mut row in p.rows_mut() {
                let lse = log_sum_exp(row.iter().copied());
                row.mapv_inplace(|x| (x - lse).exp());
            }
            out.slice_mut(cols).assign(&p.dot(&vh));
            probs.push(p);
        }
        self.push_op(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// `x · w + b` for a `1 × out` bias row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Reverse pass from a scalar node. Returns gradients per parameter.
    pub fn backward(&self, output: Var) -> Gradients {
        let node_grads = self.backward_nodes(output);
        let mut grads = vec![None; self.params.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                grads[id.0] = node_grads[i].clone();
            }
        }
        Gradients::from_vec(grads)
    }

    /// Reverse pass returning the gradient of `output` with respect to every
    /// node (untracked nodes get `None`).
    pub fn backward_nodes(&self, output: Var) -> Vec<Option<Matrix>> {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut send = |target: Var, delta: Matrix| {
            if !self.nodes[target.0].tracked {
                return;
            }
            match &mut grads[target.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    send(*a, g.dot(&self.value(*b).t()));
                }
                if self.tracked(*b) {
                    send(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    send(*a, g * self.value(*b));
                }
                if self.tracked(*b) {
                    send(*b, g * self.value(*a));
                }
            }
            Op::Scale(a, f) => send(*a, g * *f),
            Op::Tanh(a) => {
                let y = &node.value;
                send(*a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                send(*a, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Gelu(a) => {
                let d = self.value(*a).mapv(|x| {
                    let inner = GELU_C * (x + 0.044715 * x * x * x);
                    let t = inner.tanh();
                    0.5 * (1.0 + t)
                        + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
                });
                send(*a, g * &d);
            }
            Op::Exp(a) => send(*a, g * &node.value),
            Op::Clamp(a, lo, hi) => {
                let mask = self
                    .value(*a)
                    .mapv(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 });
                send(*a, g * &mask);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy = g * y;
                let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                send(*a, &gy - &(y * &dots));
            }
            Op::LogSoftmax(a) => {
                let p = node.value.mapv(f64::exp);
                let sums = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                send(*a, g - &(&p * &sums));
            }
            Op::Sum(a) => {
                let shape = self.shape(*a);
                send(*a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let row = g / r as f64;
                send(*a, row.broadcast((r, c)).unwrap().to_owned());
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.tracked(p) {
                        send(p, g.slice(s![.., offset..offset + w]).to_owned());
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.tracked(p) {
                        send(p, g.slice(s![offset..offset + h, ..]).to_owned());
                    }
                    offset += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut full = Array2::zeros(self.shape(*a));
                let w = g.ncols();
                full.slice_mut(s![.., *start..*start + w]).assign(g);
                send(*a, full);
            }
            Op::SliceRows(a, start) => {
                let mut full = Array2::zeros(self.shape(*a));
                let h = g.nrows();
                full.slice_mut(s![*start..*start + h, ..]).assign(g);
                send(*a, full);
            }
            Op::GatherRows(table, indices) => {
                let mut full = Array2::zeros(self.shape(*table));
                for (i, &idx) in indices.iter().enumerate() {
                    let mut dst = full.row_mut(idx);
                    dst += &g.row(i);
                }
                send(*table, full);
            }
            Op::Pick(a, cols) => {
                let mut full = Array2::zeros(self.shape(*a));
                for (i, &j) in cols.iter().enumerate() {
                    full[[i, j]] += g[[i, 0]];
                }
                send(*a, full);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let n = normed.ncols() as f64;
                if self.tracked(*gain) {
                    send(*gain, (g * normed).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.tracked(*bias) {
                    send(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.tracked(*x) {
                    let dn = g * self.value(*gain);
                    let mut dx = Array2::zeros(dn.dim());
                    for (r, is) in inv_std.iter().enumerate() {
                        let dnr = dn.row(r);
                        let nr = normed.row(r);
                        let sum_d = dnr.sum();
                        let sum_dn = (&dnr * &nr).sum();
                        let row = (&dnr * n - sum_d - &nr * sum_dn) * (*is / n);
                        dx.row_mut(r).assign(&row);
                    }
                    send(*x, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (t, d) = self.shape(*q);
                let dk = d / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let mut dq = Array2::zeros((t, d));
                let mut dkm = Array2::zeros((t, d));
                let mut dv = Array2::zeros((t, d));
                for (h, p) in probs.iter().enumerate() {
                    let cols = s![.., h * dk..(h + 1) * dk];
                    let gh = g.slice(cols);
                    let qh = self.value(*q).slice(cols);
                    let kh = self.value(*k).slice(cols);
                    let vh = self.value(*v).slice(cols);
                    dv.slice_mut(cols).assign(&p.t().dot(&gh));
                    let dp = gh.dot(&vh.t());
                    let dots = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ds = p * &(&dp - &dots) * scale;
                    dq.slice_mut(cols).assign(&ds.dot(&kh));
                    dkm.slice_mut(cols).assign(&ds.t().dot(&qh));
                }
                send(*q, dq);
                send(*k, dkm);
                send(*v, dv);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln Σ exp(x_i)`; `-inf` for an empty input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values
        .clone()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.into_iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}
