//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every forward operation together with its output.
//! Parameters are read from a [`ParamStore`] by reference; gradients are
//! accumulated per storage cell, so a cell used through several views (or
//! several times in one graph) receives the sum of all contributions.

pub mod kernels;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::{CellId, CellSet, ParamStore};
use crate::real::{sigmoid, Real};
use crate::tensor::Tensor;
use kernels::{ConvSpec, TConvSpec, Window};

pub use kernels::{conv_out, tconv_out};

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Input,
    Param(CellId),
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    TConv { x: Var, w: Var, b: Option<Var>, spec: TConvSpec },
    Linear { x: Var, w: Var, b: Option<Var> },
    LeakyRelu { x: Var, slope: f64 },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    InstanceNorm { x: Var, inv_std: Vec<S> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    RowMean(Var),
    RowSum(Var),
    RowNorm(Var),
    Mean(Var),
    Sum(Var),
    SpatialMean(Var),
    Reshape(Var),
}

struct Node<S> {
    value: Option<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Graph<'a, S: Real> {
    store: &'a ParamStore<S>,
    trainable: Option<&'a CellSet>,
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<S> {
    cells: BTreeMap<CellId, Tensor<S>>,
    inputs: BTreeMap<Var, Tensor<S>>,
}

impl<S: Real> Gradients<S> {
    pub fn cell(&self, id: CellId) -> Option<&Tensor<S>> {
        self.cells.get(&id)
    }

    pub fn input(&self, v: Var) -> Option<&Tensor<S>> {
        self.inputs.get(&v)
    }

    pub fn cells(&self) -> impl Iterator<Item = (CellId, &Tensor<S>)> {
        self.cells.iter().map(|(k, v)| (*k, v))
    }

    pub fn all_finite(&self) -> bool {
        self.cells.values().all(Tensor::all_finite)
    }
}

impl<'a, S: Real> Graph<'a, S> {
    /// Graph in which every parameter cell is differentiable.
    pub fn new(store: &'a ParamStore<S>) -> Self {
        Graph { store, trainable: None, nodes: Vec::new() }
    }

    /// Graph in which only cells in `trainable` receive gradients.
    pub fn with_trainable(store: &'a ParamStore<S>, trainable: &'a CellSet) -> Self {
        Graph { store, trainable: Some(trainable), nodes: Vec::new() }
    }

    pub fn store(&self) -> &'a ParamStore<S> {
        self.store
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(t), _) => t,
            (None, Op::Param(c)) => self.store.get(*c),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> S {
        self.value(v).data()[0]
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is reported by [`Gradients::input`].
    pub fn input_with_grad(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, cell: CellId) -> Var {
        let needs = self.trainable.map_or(true, |t| t.contains(cell));
        self.nodes.push(Node { value: None, op: Op::Param(cell), needs_grad: needs });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, groups: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(xs[1], cin_g * groups, "conv2d channel mismatch");
        let oh = conv_out(xs[2], kh, stride, pad).expect("conv2d window larger than input");
        let ow = conv_out(xs[3], kw, stride, pad).expect("conv2d window larger than input");
        let win = Window { channels: cin_g, h: xs[2], w: xs[3], kh, kw, stride, pad, oh, ow };
        let spec = ConvSpec { batch: xs[0], cin: xs[1], cout, groups, win };
        let y = kernels::conv2d_forward(&spec, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let ng = self.ng(x) || self.ng(w) || b.map_or(false, |b| self.ng(b));
        self.push(Tensor::from_vec(&[xs[0], cout, oh, ow], y), Op::Conv { x, w, b, spec }, ng)
    }

    /// Transposed convolution; weight layout `[cin, cout, kh, kw]`.
    pub fn tconv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, out_pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs[1], ws[0], "tconv2d channel mismatch");
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        let h = tconv_out(xs[2], kh, stride, pad, out_pad).expect("tconv2d degenerate output");
        let wd = tconv_out(xs[3], kw, stride, pad, out_pad).expect("tconv2d degenerate output");
        let win = Window { channels: cout, h, w: wd, kh, kw, stride, pad, oh: xs[2], ow: xs[3] };
        let spec = TConvSpec { batch: xs[0], cin: xs[1], cout, win };
        let y = kernels::tconv2d_forward(&spec, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let ng = self.ng(x) || self.ng(w) || b.map_or(false, |b| self.ng(b));
        self.push(Tensor::from_vec(&[xs[0], cout, h, wd], y), Op::TConv { x, w, b, spec }, ng)
    }

    /// `x [N, in] · wᵀ [in, out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, fin) = (self.shape(x)[0], self.value(x).row_len());
        let (fout, win) = (self.shape(w)[0], self.shape(w)[1]);
        assert_eq!(fin, win, "linear input width mismatch");
        let mut y = vec![S::ZERO; n * fout];
        kernels::matmul_into(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, &mut y, false);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(fout) {
                row.iter_mut().zip(bv).for_each(|(v, &bb)| *v += bb);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.map_or(false, |b| self.ng(b));
        self.push(Tensor::from_vec(&[n, fout], y), Op::Linear { x, w, b }, ng)
    }

    fn unary(&mut self, x: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let y = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(y, op, ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = S::from_f64(slope);
        self.unary(x, Op::LeakyRelu { x, slope }, |v| if v > S::ZERO { v } else { v * s })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (S::from_f64(lo), S::from_f64(hi));
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.max(l).min(h))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let s = S::from_f64(c);
        self.unary(x, Op::Scale(x, c), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let s = S::from_f64(c);
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    /// Per-instance, per-channel normalization over the spatial plane (no affine).
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let plane = xs[2] * xs[3];
        let eps = S::from_f64(NORM_EPS);
        let denom = S::from_f64(plane as f64);
        let mut out = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(xs[0] * xs[1]);
        for chunk in out.data_mut().chunks_mut(plane) {
            let mean = chunk.iter().copied().sum::<S>() / denom;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / denom;
            let is = S::ONE / (var + eps).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let ng = self.ng(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Var {
        let y = self.value(a).zip_map(self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn rows(&mut self, x: Var, op: Op<S>, f: impl Fn(&[S]) -> S) -> Var {
        let t = self.value(x);
        let n = t.batch();
        let y: Vec<S> = (0..n).map(|i| f(t.row(i))).collect();
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[n], y), op, ng)
    }

    /// Mean over all non-batch dimensions, `[N, ...] -> [N]`.
    pub fn row_mean(&mut self, x: Var) -> Var {
        let d = S::from_f64(self.value(x).row_len() as f64);
        self.rows(x, Op::RowMean(x), |r| r.iter().copied().sum::<S>() / d)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        self.rows(x, Op::RowSum(x), |r| r.iter().copied().sum::<S>())
    }

    /// Euclidean norm of each batch entry.
    pub fn row_norm(&mut self, x: Var) -> Var {
        self.rows(x, Op::RowNorm(x), |r| r.iter().map(|&v| v * v).sum::<S>().sqrt())
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / S::from_f64(t.len() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Global average pooling, `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let plane = xs[2] * xs[3];
        let d = S::from_f64(plane as f64);
        let y: Vec<S> = self.value(x).data().chunks(plane).map(|c| c.iter().copied().sum::<S>() / d).collect();
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[xs[0], xs[1]], y), Op::SpatialMean(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).clone().reshaped(shape);
        let ng = self.ng(x);
        self.push(y, Op::Reshape(x), ng)
    }

    /// Reverse pass from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients<S> {
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; root.0 + 1];
        let mut out = Gradients::default();
        if !self.nodes[root.0].needs_grad {
            return out;
        }
        grads[root.0] = Some(Tensor::from_vec(self.value(root).shape(), vec![S::ONE]));
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    if node.needs_grad {
                        out.inputs.insert(Var(i), dy);
                    }
                }
                Op::Param(c) => match out.cells.get_mut(c) {
                    Some(acc) => acc.add_assign(&dy),
                    None => {
                        out.cells.insert(*c, dy);
                    }
                },
                op => self.backprop(op, Var(i), dy, &mut grads),
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop(&self, op: &Op<S>, me: Var, dy: Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let y = self.value(me);
        match op {
            Op::Input | Op::Param(_) => unreachable!(),
            Op::Conv { x, w, b, spec } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    spec,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy.data(),
                    self.ng(*x),
                    self.ng(*w),
                    b.map_or(false, |b| self.ng(b)),
                );
                self.finish_layer(grads, *x, *w, *b, dx, dw, db);
            }
            Op::TConv { x, w, b, spec } => {
                let (dx, dw, db) = kernels::tconv2d_backward(
                    spec,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy.data(),
                    self.ng(*x),
                    self.ng(*w),
                    b.map_or(false, |b| self.ng(b)),
                );
                self.finish_layer(grads, *x, *w, *b, dx, dw, db);
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.value(*x).row_len());
                let fout = self.shape(*w)[0];
                let dx = self.ng(*x).then(|| {
                    let mut d = vec![S::ZERO; n * fin];
                    kernels::matmul_into(n, fout, fin, dy.data(), false, self.value(*w).data(), false, &mut d, false);
                    d
                });
                let dw = self.ng(*w).then(|| {
                    let mut d = vec![S::ZERO; fout * fin];
                    kernels::matmul_into(fout, n, fin, dy.data(), true, self.value(*x).data(), false, &mut d, false);
                    d
                });
                let db = b.filter(|b| self.ng(*b)).map(|_| {
                    let mut d = vec![S::ZERO; fout];
                    for row in dy.data().chunks(fout) {
                        d.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                    }
                    d
                });
                self.finish_layer(grads, *x, *w, *b, dx, dw, db);
            }
            Op::LeakyRelu { x, slope } => {
                let s = S::from_f64(*slope);
                let g = self.value(*x).zip_map(&dy, |v, d| if v > S::ZERO { d } else { d * s });
                self.acc(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = y.zip_map(&dy, |v, d| d * (S::ONE - v * v));
                self.acc(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = y.zip_map(&dy, |v, d| d * v * (S::ONE - v));
                self.acc(grads, *x, g);
            }
            Op::Exp(x) => {
                let g = y.zip_map(&dy, |v, d| d * v);
                self.acc(grads, *x, g);
            }
            Op::Ln(x) => {
                let g = self.value(*x).zip_map(&dy, |v, d| d / v);
                self.acc(grads, *x, g);
            }
            Op::Abs(x) => {
                let g = self.value(*x).zip_map(&dy, |v, d| {
                    if v > S::ZERO {
                        d
                    } else if v < S::ZERO {
                        -d
                    } else {
                        S::ZERO
                    }
                });
                self.acc(grads, *x, g);
            }
            Op::Square(x) => {
                let two = S::from_f64(2.0);
                let g = self.value(*x).zip_map(&dy, |v, d| two * v * d);
                self.acc(grads, *x, g);
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (S::from_f64(*lo), S::from_f64(*hi));
                let g = self.value(*x).zip_map(&dy, |v, d| if v >= l && v <= h { d } else { S::ZERO });
                self.acc(grads, *x, g);
            }
            Op::InstanceNorm { x, inv_std } => {
                let plane = y.shape()[2] * y.shape()[3];
                let d = S::from_f64(plane as f64);
                let mut g = dy.clone();
                for (k, gc) in g.data_mut().chunks_mut(plane).enumerate() {
                    let yc = &y.data()[k * plane..(k + 1) * plane];
                    let mdy = gc.iter().copied().sum::<S>() / d;
                    let mdyy = gc.iter().zip(yc).map(|(&a, &b)| a * b).sum::<S>() / d;
                    for (gv, &yv) in gc.iter_mut().zip(yc) {
                        *gv = inv_std[k] * (*gv - mdy - yv * mdyy);
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Add(a, b) => {
                self.acc(grads, *b, dy.clone());
                self.acc(grads, *a, dy);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *b, dy.map(|d| -d));
                self.acc(grads, *a, dy);
            }
            Op::Mul(a, b) => {
                let ga = self.value(*b).zip_map(&dy, |v, d| v * d);
                let gb = self.value(*a).zip_map(&dy, |v, d| v * d);
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::Scale(x, c) => {
                let s = S::from_f64(*c);
                self.acc(grads, *x, dy.map(|d| d * s));
            }
            Op::AddScalar(x) => self.acc(grads, *x, dy),
            Op::RowMean(x) | Op::RowSum(x) => {
                let xt = self.value(*x);
                let r = xt.row_len();
                let scale = if matches!(op, Op::RowMean(_)) { S::ONE / S::from_f64(r as f64) } else { S::ONE };
                let mut g = Tensor::zeros(xt.shape());
                for (row, &d) in g.data_mut().chunks_mut(r).zip(dy.data()) {
                    row.iter_mut().for_each(|v| *v = d * scale);
                }
                self.acc(grads, *x, g);
            }
            Op::RowNorm(x) => {
                let xt = self.value(*x);
                let r = xt.row_len();
                let mut g = xt.clone();
                for (k, row) in g.data_mut().chunks_mut(r).enumerate() {
                    let nrm = y.data()[k];
                    let f = if nrm > S::ZERO { dy.data()[k] / nrm } else { S::ZERO };
                    row.iter_mut().for_each(|v| *v *= f);
                }
                self.acc(grads, *x, g);
            }
            Op::Mean(x) | Op::Sum(x) => {
                let xt = self.value(*x);
                let d = if matches!(op, Op::Mean(_)) { dy.data()[0] / S::from_f64(xt.len() as f64) } else { dy.data()[0] };
                self.acc(grads, *x, Tensor::full(xt.shape(), d));
            }
            Op::SpatialMean(x) => {
                let xs = self.shape(*x);
                let plane = xs[2] * xs[3];
                let inv = S::ONE / S::from_f64(plane as f64);
                let mut g = Tensor::zeros(xs);
                for (c, &d) in g.data_mut().chunks_mut(plane).zip(dy.data()) {
                    c.iter_mut().for_each(|v| *v = d * inv);
                }
                self.acc(grads, *x, g);
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.acc(grads, *x, dy.reshaped(&shape));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_layer(
        &self,
        grads: &mut [Option<Tensor<S>>],
        x: Var,
        w: Var,
        b: Option<Var>,
        dx: Option<Vec<S>>,
        dw: Option<Vec<S>>,
        db: Option<Vec<S>>,
    ) {
        if let Some(dx) = dx {
            let s = self.shape(x).to_vec();
            self.acc(grads, x, Tensor::from_vec(&s, dx));
        }
        if let Some(dw) = dw {
            let s = self.shape(w).to_vec();
            self.acc(grads, w, Tensor::from_vec(&s, dw));
        }
        if let (Some(b), Some(db)) = (b, db) {
            let s = self.shape(b).to_vec();
            self.acc(grads, b, Tensor::from_vec(&s, db));
        }
    }
}
