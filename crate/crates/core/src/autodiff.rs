//! Reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of a forward pass. Leaves either borrow
//! parameter storage or own constants; a leaf created with `needs_grad = false`
//! cuts the graph, so frozen parameter groups cost nothing in the backward pass.
//! Losses with hand-derived gradients (cross-entropy, CTC) enter the graph via
//! [`Tape::loss_with_grad`].

use std::borrow::Cow;

use crate::tensor::{gemm, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy { x: Var, s: Var, idx: usize },
    Gelu(Var),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Softmax(Var),
    Cols { x: Var, start: usize },
    Rows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Im2Col { x: Var, kernel: usize, stride: usize, pad: usize },
    ReplaceRows { x: Var, emb: Var, rows: Vec<usize> },
    Lstm(Box<LstmCache>),
    LossWithGrad { x: Var, grad: Mat },
    Sum(Var),
    DotConst { x: Var, w: Mat },
}

struct LstmCache {
    x: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    reverse: bool,
    /// Activated gates per step, `[i f g o]`, T × 4H.
    gates: Mat,
    cells: Mat,
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
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

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-wise layer normalization; returns (output, normalized input, 1/std per row).
pub(crate) fn layer_norm_rows(x: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> (Mat, Mat, Vec<f64>) {
    let d = x.cols();
    let mut xhat = Mat::zeros(x.rows(), d);
    let mut out = Mat::zeros(x.rows(), d);
    let mut inv = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv.push(is);
        let xr = xhat.row_mut(r);
        for c in 0..d {
            xr[c] = (row[c] - mean) * is;
        }
        let or = out.row_mut(r);
        for c in 0..d {
            or[c] = xhat.get(r, c) * gamma[c] + beta[c];
        }
    }
    (out, xhat, inv)
}

pub const LN_EPS: f64 = 1e-5;

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Borrowed parameter leaf.
    pub fn param(&mut self, value: &'a Mat, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Mat, needs_grad: bool) -> Var {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = Mat::from_vec(va.rows(), va.cols(), data);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Adds the `1 × n` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.rows(), 1);
        assert_eq!(bv.cols(), self.value(x).cols());
        let mut v = self.value(x).clone();
        let bias = bv.data().to_vec();
        for r in 0..v.rows() {
            for (o, b) in v.row_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let ng = self.ng(&[x, b]);
        self.push(v, Op::AddRow(x, b), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|a| a * s);
        let ng = self.ng(&[x]);
        self.push(v, Op::Scale(x, s), ng)
    }

    /// `x · s[0, idx]` for a row vector `s`.
    pub fn scale_by(&mut self, x: Var, s: Var, idx: usize) -> Var {
        let k = self.value(s).get(0, idx);
        let v = self.value(x).map(|a| a * k);
        let ng = self.ng(&[x, s]);
        self.push(v, Op::ScaleBy { x, s, idx }, ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        let ng = self.ng(&[x]);
        self.push(v, Op::Gelu(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { 0.0 });
        let ng = self.ng(&[x]);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (out, xhat, inv_std) =
            layer_norm_rows(self.value(x), self.value(gamma).data(), self.value(beta).data(), LN_EPS);
        let ng = self.ng(&[x, gamma, beta]);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        let ng = self.ng(&[x]);
        self.push(v, Op::Softmax(x), ng)
    }

    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).cols_slice(start, len);
        let ng = self.ng(&[x]);
        self.push(v, Op::Cols { x, start }, ng)
    }

    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let v = Mat::from_vec(len, xv.cols(), xv.data()[start * xv.cols()..(start + len) * xv.cols()].to_vec());
        let ng = self.ng(&[x]);
        self.push(v, Op::Rows { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Mat::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows);
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let ng = self.ng(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Unfolds strided windows of `kernel` rows into single rows of width
    /// `kernel · cols`, with `pad` zero rows on both ends.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (t_in, c) = xv.shape();
        let padded = t_in + 2 * pad;
        assert!(padded >= kernel && stride >= 1);
        let t_out = (padded - kernel) / stride + 1;
        let mut v = Mat::zeros(t_out, kernel * c);
        for t in 0..t_out {
            let out = v.row_mut(t);
            for j in 0..kernel {
                let p = t * stride + j;
                if p >= pad && p - pad < t_in {
                    out[j * c..(j + 1) * c].copy_from_slice(xv.row(p - pad));
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(v, Op::Im2Col { x, kernel, stride, pad }, ng)
    }

    /// Rows listed in `rows` are replaced by the `1 × d` embedding `emb`.
    pub fn replace_rows(&mut self, x: Var, emb: Var, rows: &[usize]) -> Var {
        let mut v = self.value(x).clone();
        let e = self.value(emb).data().to_vec();
        assert_eq!(e.len(), v.cols());
        for &r in rows {
            v.row_mut(r).copy_from_slice(&e);
        }
        let ng = self.ng(&[x, emb]);
        self.push(v, Op::ReplaceRows { x, emb, rows: rows.to_vec() }, ng)
    }

    /// One LSTM direction over the whole sequence. Gate order is `[i f g o]`;
    /// `w_ih` is `in × 4H`, `w_hh` is `H × 4H`, `bias` is `1 × 4H`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Var {
        let (out, gates, cells) =
            lstm_forward(self.value(x), self.value(w_ih), self.value(w_hh), self.value(bias), reverse);
        let ng = self.ng(&[x, w_ih, w_hh, bias]);
        self.push(out, Op::Lstm(Box::new(LstmCache { x, w_ih, w_hh, bias, reverse, gates, cells })), ng)
    }

    /// A scalar loss whose gradient w.r.t. `x` was computed by the caller.
    pub fn loss_with_grad(&mut self, x: Var, value: f64, grad: Mat) -> Var {
        assert_eq!(grad.shape(), self.value(x).shape());
        let ng = self.ng(&[x]);
        self.push(Mat::filled(1, 1, value), Op::LossWithGrad { x, grad }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(&[x]);
        self.push(Mat::filled(1, 1, s), Op::Sum(x), ng)
    }

    /// `Σ x ⊙ w` for a constant `w`.
    pub fn dot_const(&mut self, x: Var, w: Mat) -> Var {
        assert_eq!(w.shape(), self.value(x).shape());
        let s = self.value(x).data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        let ng = self.ng(&[x]);
        self.push(Mat::filled(1, 1, s), Op::DotConst { x, w }, ng)
    }

    /// Back-propagates from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = self.value(root);
        grads[root.0] = Some(Mat::filled(rv.rows(), rv.cols(), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(e) => e.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs_grad(*a) {
                    self.acc(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.needs_grad(*b) {
                    self.acc(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.needs_grad(*a) {
                    self.acc(grads, *a, g.matmul(self.value(*b)));
                }
                if self.needs_grad(*b) {
                    self.acc(grads, *b, g.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *a, Mat::from_vec(g.rows(), g.cols(), d));
                }
                if self.needs_grad(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *b, Mat::from_vec(g.rows(), g.cols(), d));
                }
            }
            Op::AddRow(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.needs_grad(*b) {
                    self.acc(grads, *b, col_sums(g));
                }
            }
            Op::Scale(x, s) => self.acc(grads, *x, g.map(|v| v * s)),
            Op::ScaleBy { x, s, idx } => {
                let sv = self.value(*s);
                let k = sv.get(0, *idx);
                if self.needs_grad(*x) {
                    self.acc(grads, *x, g.map(|v| v * k));
                }
                if self.needs_grad(*s) {
                    let mut ds = Mat::zeros(1, sv.cols());
                    let dot = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    ds.set(0, *idx, dot);
                    self.acc(grads, *s, ds);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = g.data().iter().zip(xv.data()).map(|(g, &x)| g * gelu_grad(x)).collect();
                self.acc(grads, *x, Mat::from_vec(g.rows(), g.cols(), d));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = g.data().iter().zip(xv.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                self.acc(grads, *x, Mat::from_vec(g.rows(), g.cols(), d));
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = g.cols();
                let gam = self.value(*gamma).data();
                if self.needs_grad(*gamma) {
                    let mut dg = Mat::zeros(1, d);
                    for r in 0..g.rows() {
                        for c in 0..d {
                            dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                        }
                    }
                    self.acc(grads, *gamma, dg);
                }
                if self.needs_grad(*beta) {
                    self.acc(grads, *beta, col_sums(g));
                }
                if self.needs_grad(*x) {
                    let mut dx = Mat::zeros(g.rows(), d);
                    for r in 0..g.rows() {
                        let dxhat: Vec<f64> = (0..d).map(|c| g.get(r, c) * gam[c]).collect();
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let out = dx.row_mut(r);
                        for c in 0..d {
                            out[c] = inv_std[r] * (dxhat[c] - m1 - xhat.get(r, c) * m2);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let mut dx = Mat::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::Cols { x, start } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, *x, dx);
            }
            Op::Rows { x, start } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows(), xv.cols());
                let c = xv.cols();
                dx.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                self.acc(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs_grad(*p) {
                        self.acc(grads, *p, g.cols_slice(off, w));
                    }
                    off += w;
                }
            }
            Op::Im2Col { x, kernel, stride, pad } => {
                let xv = self.value(*x);
                let (t_in, c) = xv.shape();
                let mut dx = Mat::zeros(t_in, c);
                for t in 0..g.rows() {
                    let gr = g.row(t);
                    for j in 0..*kernel {
                        let p = t * stride + j;
                        if p >= *pad && p - pad < t_in {
                            for (o, v) in dx.row_mut(p - pad).iter_mut().zip(&gr[j * c..(j + 1) * c]) {
                                *o += v;
                            }
                        }
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::ReplaceRows { x, emb, rows } => {
                if self.needs_grad(*x) {
                    let mut dx = g.clone();
                    for &r in rows {
                        dx.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    }
                    self.acc(grads, *x, dx);
                }
                if self.needs_grad(*emb) {
                    let mut de = Mat::zeros(1, g.cols());
                    for &r in rows {
                        for (o, v) in de.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.acc(grads, *emb, de);
                }
            }
            Op::Lstm(cache) => self.lstm_backward(i, cache, g, grads),
            Op::LossWithGrad { x, grad } => {
                let s = g.get(0, 0);
                self.acc(grads, *x, grad.map(|v| v * s));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, Mat::filled(xv.rows(), xv.cols(), g.get(0, 0)));
            }
            Op::DotConst { x, w } => {
                let s = g.get(0, 0);
                self.acc(grads, *x, w.map(|v| v * s));
            }
        }
    }

    fn lstm_backward(&self, _i: usize, c: &LstmCache, dout: &Mat, grads: &mut [Option<Mat>]) {
        let x = self.value(c.x);
        let w_ih = self.value(c.w_ih);
        let w_hh = self.value(c.w_hh);
        let t_len = x.rows();
        let h = w_hh.rows();
        let order: Vec<usize> = if c.reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        let mut dz = Mat::zeros(t_len, 4 * h);
        // h_{t-1} as seen by step t (in processing order), for dW_hh.
        let mut h_prev = Mat::zeros(t_len, h);
        let mut dh_rec = vec![0.0; h];
        let mut dc_rec = vec![0.0; h];
        for (k, &t) in order.iter().enumerate().rev() {
            let gates = c.gates.row(t);
            let prev = if k > 0 { Some(order[k - 1]) } else { None };
            let c_t = c.cells.row(t);
            let mut dz_t = vec![0.0; 4 * h];
            for j in 0..h {
                let (ig, fg, gg, og) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = c_t[j].tanh();
                let dh = dout.get(t, j) + dh_rec[j];
                let d_o = dh * tc;
                let dc = dh * og * (1.0 - tc * tc) + dc_rec[j];
                let c_prev = prev.map_or(0.0, |p| c.cells.get(p, j));
                dz_t[j] = dc * gg * ig * (1.0 - ig);
                dz_t[h + j] = dc * c_prev * fg * (1.0 - fg);
                dz_t[2 * h + j] = dc * ig * (1.0 - gg * gg);
                dz_t[3 * h + j] = d_o * og * (1.0 - og);
                dc_rec[j] = dc * fg;
            }
            if let Some(p) = prev {
                let hp: Vec<f64> = (0..h)
                    .map(|j| c.gates.get(p, 3 * h + j) * c.cells.get(p, j).tanh())
                    .collect();
                h_prev.row_mut(t).copy_from_slice(&hp);
            }
            for (r, v) in dh_rec.iter_mut().enumerate() {
                let wr = w_hh.row(r);
                *v = wr.iter().zip(&dz_t).map(|(a, b)| a * b).sum();
            }
            dz.row_mut(t).copy_from_slice(&dz_t);
        }
        if self.needs_grad(c.w_hh) {
            self.acc(grads, c.w_hh, h_prev.matmul_tn(&dz));
        }
        if self.needs_grad(c.w_ih) {
            self.acc(grads, c.w_ih, x.matmul_tn(&dz));
        }
        if self.needs_grad(c.bias) {
            self.acc(grads, c.bias, col_sums(&dz));
        }
        if self.needs_grad(c.x) {
            self.acc(grads, c.x, dz.matmul_nt(w_ih));
        }
    }
}

fn col_sums(g: &Mat) -> Mat {
    let mut s = Mat::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in s.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    s
}

/// Returns (hidden outputs T × H, activated gates T × 4H, cells T × H).
pub(crate) fn lstm_forward(x: &Mat, w_ih: &Mat, w_hh: &Mat, bias: &Mat, reverse: bool) -> (Mat, Mat, Mat) {
    let t_len = x.rows();
    let h = w_hh.rows();
    assert_eq!(w_ih.cols(), 4 * h);
    assert_eq!(w_hh.cols(), 4 * h);
    let mut z_all = Mat::zeros(t_len, 4 * h);
    for r in 0..t_len {
        z_all.row_mut(r).copy_from_slice(bias.data());
    }
    gemm(x, false, w_ih, false, &mut z_all, 1.0);
    let mut out = Mat::zeros(t_len, h);
    let mut gates = Mat::zeros(t_len, 4 * h);
    let mut cells = Mat::zeros(t_len, h);
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    for t in order {
        let mut z = z_all.row(t).to_vec();
        for (j, hv) in h_prev.iter().enumerate() {
            if *hv != 0.0 {
                for (zv, w) in z.iter_mut().zip(w_hh.row(j)) {
                    *zv += hv * w;
                }
            }
        }
        let gr = gates.row_mut(t);
        for j in 0..h {
            gr[j] = sigmoid(z[j]);
            gr[h + j] = sigmoid(z[h + j]);
            gr[2 * h + j] = z[2 * h + j].tanh();
            gr[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let c = gr[h + j] * c_prev[j] + gr[j] * gr[2 * h + j];
            let hv = gr[3 * h + j] * c.tanh();
            c_prev[j] = c;
            h_prev[j] = hv;
        }
        cells.row_mut(t).copy_from_slice(&c_prev);
        out.row_mut(t).copy_from_slice(&h_prev);
    }
    (out, gates, cells)
}
