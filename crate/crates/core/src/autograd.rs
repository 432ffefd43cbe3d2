//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! walks the record in reverse and returns gradients for the parameters that
//! were pulled in with [`Graph::param`]. Sequences are laid out feature-major:
//! a matrix of shape `channels x length`, one column per time step.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleCols(Var, Arc<Vec<f64>>),
    MulConst(Var, Arc<Mat>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Transpose(Var),
    RowSlice(Var, usize),
    ConcatRows(Vec<Var>),
    Embed { table: Var, ids: Arc<Vec<Option<usize>>> },
    GatherCols(Var, Arc<Vec<usize>>),
    Im2Col { x: Var, geom: ConvGeom },
    Col2Im { x: Var, geom: ConvGeom },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SqErrSum { x: Var, target: Arc<Mat>, cols: Arc<Vec<bool>> },
    AbsErrSum { x: Var, target: Arc<Vec<f64>>, cols: Arc<Vec<bool>> },
    Sum(Var),
}

/// Geometry of a 1-D convolution over columns.
///
/// `len` is the length of the un-unfolded signal and `out_len` the number of
/// output positions; position `t` reads input columns
/// `t * stride + j - pad_left` for `j in 0..kernel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub len: usize,
    pub out_len: usize,
}

impl ConvGeom {
    /// Length-preserving stride-1 geometry ("same" zero padding).
    pub fn same(channels: usize, kernel: usize, len: usize) -> Self {
        Self {
            channels,
            kernel,
            stride: 1,
            pad_left: (kernel - 1) / 2,
            len,
            out_len: len,
        }
    }

    /// Strided geometry with `out_len = len / stride` for divisible lengths.
    pub fn strided(channels: usize, kernel: usize, stride: usize, len: usize) -> Self {
        debug_assert!(kernel >= stride);
        Self {
            channels,
            kernel,
            stride,
            pad_left: (kernel - stride) / 2,
            len,
            out_len: len / stride,
        }
    }

    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let pos = (t * self.stride + j) as isize - self.pad_left as isize;
        (pos >= 0 && (pos as usize) < self.len).then_some(pos as usize)
    }
}

fn im2col(x: &Mat, g: &ConvGeom) -> Mat {
    let c = g.channels;
    let mut out = Mat::zeros((g.kernel * c, g.out_len));
    for j in 0..g.kernel {
        for t in 0..g.out_len {
            if let Some(src) = g.source(t, j) {
                out.slice_mut(s![j * c..(j + 1) * c, t]).assign(&x.column(src));
            }
        }
    }
    out
}

fn col2im(cols: &Mat, g: &ConvGeom) -> Mat {
    let c = g.channels;
    let mut out = Mat::zeros((c, g.len));
    for j in 0..g.kernel {
        for t in 0..g.out_len {
            if let Some(src) = g.source(t, j) {
                let mut dst = out.column_mut(src);
                dst += &cols.slice(s![j * c..(j + 1) * c, t]);
            }
        }
    }
    out
}

fn mm(a: &Mat, b: &Mat, ta: bool, tb: bool) -> Mat {
    match (ta, tb) {
        (false, false) => a.dot(b),
        (true, false) => a.t().dot(b),
        (false, true) => a.dot(&b.t()),
        (true, true) => a.t().dot(&b.t()),
    }
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradients, indexed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (slot, g) in self.grads.iter_mut().zip(other.grads) {
            match (slot.as_mut(), g) {
                (Some(acc), Some(g)) => *acc += &g,
                (None, Some(g)) => *slot = Some(g),
                _ => {}
            }
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Leaf for a stored parameter; repeated requests reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let v = mm(self.value(a), self.value(b), ta, tb);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// `x + b` with the column vector `b` broadcast over columns.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let v = self.value(x) + self.value(b);
        let ng = self.ng(x) || self.ng(b);
        self.push(v, Op::AddBias(x, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x) * k;
        let ng = self.ng(x);
        self.push(v, Op::Scale(x, k), ng)
    }

    /// Multiplies column `t` by `w[t]`; used for masking.
    pub fn scale_cols(&mut self, x: Var, w: Arc<Vec<f64>>) -> Var {
        let mut v = self.value(x).clone();
        for (mut col, &k) in v.columns_mut().into_iter().zip(w.iter()) {
            col *= k;
        }
        let ng = self.ng(x);
        self.push(v, Op::ScaleCols(x, w), ng)
    }

    /// Zeroes the columns where `mask` is false.
    pub fn mask_cols(&mut self, x: Var, mask: &[bool]) -> Var {
        if mask.iter().all(|&m| m) {
            return x;
        }
        let w = Arc::new(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect());
        self.scale_cols(x, w)
    }

    pub fn mul_const(&mut self, x: Var, k: Arc<Mat>) -> Var {
        let v = self.value(x) * &*k;
        let ng = self.ng(x);
        self.push(v, Op::MulConst(x, k), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        let ng = self.ng(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::tanh);
        let ng = self.ng(x);
        self.push(v, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        let ng = self.ng(x);
        self.push(v, Op::Sigmoid(x), ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).t().to_owned();
        let ng = self.ng(x);
        self.push(v, Op::Transpose(x), ng)
    }

    pub fn row_slice(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice(s![start..end, ..]).to_owned();
        let ng = self.ng(x);
        self.push(v, Op::RowSlice(x, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Column `j` is row `ids[j]` of `table`, or zeros for `None`.
    pub fn embed(&mut self, table: Var, ids: Arc<Vec<Option<usize>>>) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros((t.ncols(), ids.len()));
        for (j, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                v.column_mut(j).assign(&t.row(id));
            }
        }
        let ng = self.ng(table);
        self.push(v, Op::Embed { table, ids }, ng)
    }

    /// Output column `t` is input column `idx[t]`.
    pub fn gather_cols(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Var {
        let src = self.value(x);
        let mut v = Mat::zeros((src.nrows(), idx.len()));
        for (t, &i) in idx.iter().enumerate() {
            v.column_mut(t).assign(&src.column(i));
        }
        let ng = self.ng(x);
        self.push(v, Op::GatherCols(x, idx), ng)
    }

    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Var {
        debug_assert_eq!(self.value(x).dim(), (geom.channels, geom.len));
        let v = im2col(self.value(x), &geom);
        let ng = self.ng(x);
        self.push(v, Op::Im2Col { x, geom }, ng)
    }

    /// Adjoint of [`Graph::im2col`]: folds `kernel*channels x out_len` columns
    /// back onto a `channels x len` signal, summing overlaps.
    pub fn col2im(&mut self, x: Var, geom: ConvGeom) -> Var {
        debug_assert_eq!(self.value(x).dim(), (geom.kernel * geom.channels, geom.out_len));
        let v = col2im(self.value(x), &geom);
        let ng = self.ng(x);
        self.push(v, Op::Col2Im { x, geom }, ng)
    }

    /// Normalizes each column over its rows, then applies per-row gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(cols);
        for (c, col) in xv.columns().into_iter().enumerate() {
            let mean = col.sum() / rows as f64;
            let var = col.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / rows as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            Zip::from(xhat.column_mut(c)).and(&col).for_each(|h, &a| *h = (a - mean) * is);
        }
        let v = &xhat * self.value(gain) + self.value(bias);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. Entries equal to `-inf` get probability zero.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &a| m.max(a));
            if max == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            row.mapv_inplace(|a| (a - max).exp());
            let z = row.sum();
            row /= z;
        }
        let ng = self.ng(x);
        self.push(v, Op::SoftmaxRows(x), ng)
    }

    /// `sum((x - target)^2)` over the columns where `cols` is true; 1x1.
    pub fn sq_err_sum(&mut self, x: Var, target: Arc<Mat>, cols: Arc<Vec<bool>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), target.dim(), "sq_err_sum shape");
        let mut total = 0.0;
        for (c, keep) in cols.iter().enumerate() {
            if *keep {
                total += Zip::from(xv.column(c))
                    .and(target.column(c))
                    .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
            }
        }
        let ng = self.ng(x);
        self.push(Mat::from_elem((1, 1), total), Op::SqErrSum { x, target, cols }, ng)
    }

    /// `sum(|x - target|)` for a `1 x L` row over the kept positions; 1x1.
    pub fn abs_err_sum(&mut self, x: Var, target: Arc<Vec<f64>>, cols: Arc<Vec<bool>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), (1, target.len()), "abs_err_sum shape");
        let total: f64 = (0..target.len())
            .filter(|&c| cols[c])
            .map(|c| (xv[[0, c]] - target[c]).abs())
            .sum();
        let ng = self.ng(x);
        self.push(Mat::from_elem((1, 1), total), Op::AbsErrSum { x, target, cols }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(x).sum());
        let ng = self.ng(x);
        self.push(v, Op::Sum(x), ng)
    }

    /// Back-propagates from the scalar `out` and returns parameter gradients.
    pub fn backward(&self, out: Var, n_params: usize) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Mat::ones(self.value(out).dim()));
        let mut result = Gradients {
            grads: vec![None; n_params],
        };

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let ng = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    result.grads[id.0] = Some(g);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if ng(*a) {
                        let ga = match (ta, tb) {
                            (false, false) => mm(&g, bv, false, true),
                            (false, true) => mm(&g, bv, false, false),
                            (true, false) => mm(bv, &g, false, true),
                            (true, true) => mm(bv, &g, true, true),
                        };
                        acc(&mut grads, *a, ga);
                    }
                    if ng(*b) {
                        let gb = match (ta, tb) {
                            (false, false) => mm(av, &g, true, false),
                            (false, true) => mm(&g, av, true, false),
                            (true, false) => mm(av, &g, false, false),
                            (true, true) => mm(&g, av, true, true),
                        };
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddBias(x, b) => {
                    if ng(*b) {
                        acc(&mut grads, *b, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    if ng(*x) {
                        acc(&mut grads, *x, g);
                    }
                }
                Op::Mul(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(x, k) => acc(&mut grads, *x, g * *k),
                Op::ScaleCols(x, w) => {
                    let mut g = g;
                    for (mut col, &k) in g.columns_mut().into_iter().zip(w.iter()) {
                        col *= k;
                    }
                    acc(&mut grads, *x, g);
                }
                Op::MulConst(x, k) => acc(&mut grads, *x, g * &**k),
                Op::Relu(x) => {
                    let mut g = g;
                    Zip::from(&mut g)
                        .and(self.value(*x))
                        .for_each(|g, &a| {
                            if a <= 0.0 {
                                *g = 0.0
                            }
                        });
                    acc(&mut grads, *x, g);
                }
                Op::Tanh(x) => {
                    let mut g = g;
                    Zip::from(&mut g).and(&node.value).for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *x, g);
                }
                Op::Sigmoid(x) => {
                    let mut g = g;
                    Zip::from(&mut g).and(&node.value).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *x, g);
                }
                Op::Transpose(x) => acc(&mut grads, *x, g.t().to_owned()),
                Op::RowSlice(x, start) => {
                    let mut full = Mat::zeros(self.value(*x).dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *x, full);
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let r = self.value(p).nrows();
                        if ng(p) {
                            acc(&mut grads, p, g.slice(s![row..row + r, ..]).to_owned());
                        }
                        row += r;
                    }
                }
                Op::Embed { table, ids } => {
                    let mut gt = Mat::zeros(self.value(*table).dim());
                    for (j, id) in ids.iter().enumerate() {
                        if let Some(id) = *id {
                            let mut r = gt.row_mut(id);
                            r += &g.column(j);
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::GatherCols(x, idx) => {
                    let mut gx = Mat::zeros(self.value(*x).dim());
                    for (t, &i) in idx.iter().enumerate() {
                        let mut c = gx.column_mut(i);
                        c += &g.column(t);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Im2Col { x, geom } => acc(&mut grads, *x, col2im(&g, geom)),
                Op::Col2Im { x, geom } => acc(&mut grads, *x, im2col(&g, geom)),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if ng(*bias) {
                        acc(&mut grads, *bias, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    if ng(*gain) {
                        acc(&mut grads, *gain, (&g * xhat).sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    if ng(*x) {
                        let gxhat = &g * self.value(*gain);
                        let n = xhat.nrows() as f64;
                        let mut gx = Mat::zeros(xhat.dim());
                        for c in 0..xhat.ncols() {
                            let gh = gxhat.column(c);
                            let xh = xhat.column(c);
                            let sum_g = gh.sum();
                            let sum_gx = gh.dot(&xh);
                            let k = inv_std[c] / n;
                            Zip::from(gx.column_mut(c))
                                .and(&gh)
                                .and(&xh)
                                .for_each(|o, &a, &h| *o = k * (n * a - sum_g - h * sum_gx));
                        }
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::SoftmaxRows(x) => {
                    let p = &node.value;
                    let mut gx = &g * p;
                    for (mut row, prow) in gx.rows_mut().into_iter().zip(p.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&prow).for_each(|r, &pv| *r -= pv * dot);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SqErrSum { x, target, cols } => {
                    let k = g[[0, 0]];
                    let mut gx = (self.value(*x) - &**target) * (2.0 * k);
                    for (c, keep) in cols.iter().enumerate() {
                        if !keep {
                            gx.column_mut(c).fill(0.0);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::AbsErrSum { x, target, cols } => {
                    let k = g[[0, 0]];
                    let xv = self.value(*x);
                    let mut gx = Mat::zeros(xv.dim());
                    for c in 0..target.len() {
                        if cols[c] {
                            let d = xv[[0, c]] - target[c];
                            gx[[0, c]] = if d > 0.0 {
                                k
                            } else if d < 0.0 {
                                -k
                            } else {
                                0.0
                            };
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let k = g[[0, 0]];
                    acc(&mut grads, *x, Mat::from_elem(self.value(*x).dim(), k));
                }
            }
        }
        result
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of every parameter entry against `backward`.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph, &ParamStore) -> Var) {
        let mut g = Graph::new();
        let out = f(&mut g, store);
        let grads = g.backward(out, store.len());
        let h = 1e-6;
        for id in store.ids() {
            let analytic = grads.get(id).cloned().unwrap_or_else(|| Mat::zeros(store.value(id).dim()));
            let shape = store.value(id).dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let orig = store.value(id)[[r, c]];
                    store.value_mut(id)[[r, c]] = orig + h;
                    let mut gp = Graph::new();
                    let vp = f(&mut gp, store);
                    let fp = gp.scalar(vp);
                    store.value_mut(id)[[r, c]] = orig - h;
                    let mut gm = Graph::new();
                    let vm = f(&mut gm, store);
                    let fm = gm.scalar(vm);
                    store.value_mut(id)[[r, c]] = orig;
                    let numeric = (fp - fm) / (2.0 * h);
                    let a = analytic[[r, c]];
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(err < 1e-5, "{} [{r},{c}]: analytic {a} numeric {numeric}", store.name(id));
                }
            }
        }
    }

    #[test]
    fn matmul_variants_and_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let a = store.add("a", rand_mat(&mut rng, 3, 4));
        let b = store.add("b", rand_mat(&mut rng, 4, 5));
        let c = store.add("c", rand_mat(&mut rng, 5, 3));
        let bias = store.add("bias", rand_mat(&mut rng, 3, 1));
        check(&mut store, |g, s| {
            let (a, b, c, bias) = (g.param(s, a), g.param(s, b), g.param(s, c), g.param(s, bias));
            let ab = g.matmul(a, b); // 3x5
            let abc = g.matmul_t(ab, c, false, false); // 3x3
            let at = g.matmul_t(b, a, true, true); // 5x3
            let tt = g.matmul_t(c, b, true, true); // 3x4
            let y = g.matmul_t(tt, a, false, true); // 3x3
            let tn = g.matmul_t(c, at, true, false); // 3x3
            let z = g.add(abc, y);
            let z = g.add(z, tn);
            let z = g.add_bias(z, bias);
            let t = g.tanh(z);
            let sg = g.sigmoid(z);
            let m = g.mul(t, sg);
            let r = g.relu(m);
            let r = g.scale(r, 1.7);
            let sm = g.softmax_rows(z);
            let q = g.mul(sm, r);
            g.sum(q)
        });
    }

    #[test]
    fn layer_norm_conv_and_gathers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::default();
        let x = store.add("x", rand_mat(&mut rng, 4, 6));
        let gain = store.add("gain", rand_mat(&mut rng, 4, 1));
        let bias = store.add("bias", rand_mat(&mut rng, 4, 1));
        let w = store.add("w", rand_mat(&mut rng, 3, 4 * 3));
        let table = store.add("table", rand_mat(&mut rng, 5, 3));
        let target = Arc::new(rand_mat(&mut rng, 3, 6));
        check(&mut store, |g, s| {
            let x = g.param(s, x);
            let (gain, bias, w, table) = (g.param(s, gain), g.param(s, bias), g.param(s, w), g.param(s, table));
            let ln = g.layer_norm(x, gain, bias, 1e-5);
            let cols = g.im2col(ln, ConvGeom::same(4, 3, 6));
            let y = g.matmul(w, cols); // 3x6
            let e = g.embed(table, Arc::new(vec![Some(1), None, Some(4), Some(1), Some(0), Some(2)]));
            let y = g.add(y, e);
            let gathered = g.gather_cols(y, Arc::new(vec![0, 0, 2, 3, 5, 5]));
            let sliced = g.row_slice(gathered, 1, 3);
            let first = g.row_slice(gathered, 0, 1);
            let cat = g.concat_rows(&[first, sliced]);
            let masked = g.mask_cols(cat, &[true, true, false, true, true, true]);
            g.sq_err_sum(masked, target.clone(), Arc::new(vec![true, false, true, true, true, true]))
        });
    }

    #[test]
    fn strided_and_transposed_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        let x = store.add("x", rand_mat(&mut rng, 2, 8));
        let w = store.add("w", rand_mat(&mut rng, 3, 2 * 4));
        let wt = store.add("wt", rand_mat(&mut rng, 2 * 4, 3));
        let target = Arc::new(vec![0.3, -0.2, 0.1, 0.5, 0.0, 0.2, -0.4, 0.9]);
        check(&mut store, |g, s| {
            let (x, w, wt) = (g.param(s, x), g.param(s, w), g.param(s, wt));
            let down = ConvGeom::strided(2, 4, 2, 8);
            let cols = g.im2col(x, down);
            let z = g.matmul(w, cols); // 3 x 4
            let up_cols = g.matmul(wt, z); // 8 x 4
            let y = g.col2im(up_cols, down); // 2 x 8
            let row = g.row_slice(y, 1, 2);
            g.abs_err_sum(row, target.clone(), Arc::new(vec![true; 8]))
        });
    }

    #[test]
    fn softmax_masks_neg_infinity() {
        let mut g = Graph::new();
        let x = g.constant(ndarray::array![[0.0, f64::NEG_INFINITY, 0.0]]);
        let p = g.softmax_rows(x);
        assert_eq!(g.value(p), &ndarray::array![[0.5, 0.0, 0.5]]);
    }

    #[test]
    fn strided_geometry_lengths() {
        let g = ConvGeom::strided(1, 8, 4, 64);
        assert_eq!(g.out_len, 16);
        let g = ConvGeom::same(3, 9, 10);
        assert_eq!((g.pad_left, g.out_len), (4, 10));
    }
}
