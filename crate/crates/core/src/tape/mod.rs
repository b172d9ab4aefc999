//! Reverse-mode automatic differentiation over `(batch, channel, height, width)` arrays.
//!
//! A [`Tape`] records every operation as a node holding its output. [`Tape::backward`]
//! sweeps the nodes in reverse and returns gradients for everything that depends on a
//! leaf created with `requires_grad`. Convolutions run batch entries in parallel on the
//! current rayon pool; per-entry weight gradients are summed in batch order, so results do
//! not depend on the number of workers.

mod conv;
pub mod gradcheck;
mod tensor;

pub use conv::ConvGeom;
pub use tensor::{Real, Tensor};

use std::sync::Mutex;

use rayon::prelude::*;

use crate::grid::stencil::{self, Axis};
use crate::{Error, Result};
use conv::Plan;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer (`γ`, `β` live on the tape as parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormState {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, plan: Plan },
    ConvT { x: Var, w: Var, b: Option<Var>, plan: Plan },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, invstd: Vec<f64>, train: bool },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Concat { parts: Vec<Var> },
    Stencil { x: Var, axis: Axis, h: f64 },
    Sum { x: Var },
    L2Norm { x: Var },
    L2NormPerSample { x: Var },
    ScalePerSample { x: Var, factors: Vec<f64> },
    Pad { x: Var },
    Crop { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients from one backward sweep, indexed by [`Var`]. Only leaves keep their gradient.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<[usize; 4]>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The gradient, or zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    scratch: Mutex<Vec<Vec<T>>>,
}

/// A convolution work buffer borrowed from the tape; handed back on drop.
struct Scratch<'a, T> {
    buf: Vec<T>,
    pool: &'a Mutex<Vec<Vec<T>>>,
}

impl<T> Drop for Scratch<'_, T> {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.buf);
        self.pool.lock().unwrap_or_else(|e| e.into_inner()).push(buf);
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), scratch: Mutex::new(Vec::new()) }
    }

    /// Every kernel overwrites its buffer before reading it, so stale contents are fine.
    fn scratch(&self, len: usize) -> Scratch<'_, T> {
        let mut buf = self.scratch.lock().unwrap_or_else(|e| e.into_inner()).pop().unwrap_or_default();
        if buf.len() < len {
            buf.resize(len, T::zero());
        }
        Scratch { buf, pool: &self.scratch }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn conv_plan(&self, x: Var, w: Var, b: Option<Var>, stride: usize, dilation: usize, transposed: bool) -> Result<Plan> {
        let [_, c, h, wd] = self.shape(x);
        let [w0, w1, k, k2] = self.shape(w);
        if k != k2 || k % 2 == 0 {
            return Err(shape_err(format!("kernel must be square and odd, got {k}x{k2}")));
        }
        if !(stride == 1 || stride == 2) || dilation == 0 {
            return Err(Error::InvalidArgument(format!("stride {stride} / dilation {dilation} unsupported")));
        }
        let geom = ConvGeom::new(k, stride, dilation);
        let (c_in, c_out) = if transposed { (w0, w1) } else { (w1, w0) };
        if c != c_in {
            return Err(shape_err(format!("input has {c} channels, kernel expects {c_in}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(shape_err(format!("bias has {} entries, expected {c_out}", self.value(b).len())));
            }
        }
        if stride == 2 && !transposed && (h % 2 != 0 || wd % 2 != 0) {
            return Err(shape_err(format!("stride-2 convolution needs even spatial size, got {h}x{wd}")));
        }
        if transposed {
            let big = (h * stride, wd * stride);
            if geom.out_size(big.0) != Some(h) || geom.out_size(big.1) != Some(wd) {
                return Err(shape_err(format!("transposed convolution cannot map {h}x{wd} to {}x{}", big.0, big.1)));
            }
            Ok(Plan { c_big: c_out, c_small: c_in, big, small: (h, wd), geom, transposed })
        } else {
            let ho = geom.out_size(h).ok_or_else(|| shape_err("input smaller than kernel".into()))?;
            let wo = geom.out_size(wd).ok_or_else(|| shape_err("input smaller than kernel".into()))?;
            Ok(Plan { c_big: c_in, c_small: c_out, big: (h, wd), small: (ho, wo), geom, transposed })
        }
    }

    fn add_bias(y: &mut Tensor<T>, bias: &Tensor<T>) {
        let [_, c, h, w] = y.shape();
        let plane = h * w;
        for (idx, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let bv = bias.data()[idx % c];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }

    /// Cross-correlation with weights `(c_out, c_in, k, k)`, "same"-style zero padding
    /// `dilation·(k−1)/2`; stride 2 halves an even input exactly.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, dilation: usize) -> Result<Var> {
        let plan = self.conv_plan(x, w, b, stride, dilation, false)?;
        let batch = self.shape(x)[0];
        let out_len = plan.c_small * plan.small.0 * plan.small.1;
        let mut y = Tensor::zeros([batch, plan.c_small, plan.small.0, plan.small.1]);
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            let n = plan.col_len();
            y.data_mut().par_chunks_mut(out_len).enumerate().for_each_init(
                || self.scratch(n),
                |col, (bi, yb)| plan.conv_forward(xv.sample(bi), wv, yb, &mut col.buf[..n]),
            );
        }
        if let Some(b) = b {
            Self::add_bias(&mut y, self.value(b));
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(y, Op::Conv { x, w, b, plan }, &parents))
    }

    /// Adjoint of the stride-2 [`Tape::conv2d`] with weights `(c_in, c_out, k, k)`; doubles
    /// the spatial size.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let plan = self.conv_plan(x, w, b, stride, 1, true)?;
        let batch = self.shape(x)[0];
        let out_len = plan.c_big * plan.big.0 * plan.big.1;
        let mut y = Tensor::zeros([batch, plan.c_big, plan.big.0, plan.big.1]);
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            let n = plan.col_len();
            y.data_mut().par_chunks_mut(out_len).enumerate().for_each_init(
                || self.scratch(n),
                |col, (bi, yb)| plan.convt_forward(xv.sample(bi), wv, yb, &mut col.buf[..n]),
            );
        }
        if let Some(b) = b {
            Self::add_bias(&mut y, self.value(b));
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(y, Op::ConvT { x, w, b, plan }, &parents))
    }

    /// Per-channel batch normalisation. Train mode uses statistics over batch and space and
    /// updates `state` with the momentum rule; Eval mode uses the running estimates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState, mode: BnMode) -> Result<Var> {
        let [b, c, h, w] = self.shape(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c || state.channels() != c {
            return Err(shape_err(format!("batch norm over {c} channels got mismatched parameters")));
        }
        let plane = h * w;
        let count = b * plane;
        let xv = self.value(x);
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        match mode {
            BnMode::Train => {
                for (idx, chunk) in xv.data().chunks(plane).enumerate() {
                    mean[idx % c] += lane_sum(chunk, |v| v.f64());
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for (idx, chunk) in xv.data().chunks(plane).enumerate() {
                    let mu = mean[idx % c];
                    var[idx % c] += lane_sum(chunk, |v| (v.f64() - mu).powi(2));
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let unbiased = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                for ci in 0..c {
                    state.running_mean[ci] = (1.0 - state.momentum) * state.running_mean[ci] + state.momentum * mean[ci];
                    state.running_var[ci] = (1.0 - state.momentum) * state.running_var[ci] + state.momentum * var[ci] * unbiased;
                }
            }
            BnMode::Eval => {
                mean.copy_from_slice(&state.running_mean);
                var.copy_from_slice(&state.running_var);
            }
        }
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = xv.clone();
        let mut y = xv.clone();
        for (idx, (xc, yc)) in xhat.data_mut().chunks_mut(plane).zip(y.data_mut().chunks_mut(plane)).enumerate() {
            let ci = idx % c;
            let (mu, is, g, be) = (mean[ci], invstd[ci], gv[ci].f64(), bv[ci].f64());
            for (xo, yo) in xc.iter_mut().zip(yc.iter_mut()) {
                let n = (xo.f64() - mu) * is;
                *xo = T::of(n);
                *yo = T::of(n * g + be);
            }
        }
        let train = mode == BnMode::Train;
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, xhat, invstd, train }, &[x, gamma, beta]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu { x }, &[x])
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut y = self.value(a).clone();
        for (v, &w) in y.data_mut().iter_mut().zip(self.value(b).data()) {
            *v = *v - w;
        }
        Ok(self.push(y, Op::Sub { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let st = T::of(s);
        let y = self.value(x).map(|v| v * st);
        self.push(y, Op::Scale { x, s }, &[x])
    }

    /// Concatenates along the channel axis, preserving order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat of nothing".into()))?;
        let [b, _, h, w] = self.shape(first);
        let mut c_total = 0;
        for &p in parts {
            let [pb, pc, ph, pw] = self.shape(p);
            if (pb, ph, pw) != (b, h, w) {
                return Err(shape_err(format!("concat needs matching (b, h, w), got {:?}", self.shape(p))));
            }
            c_total += pc;
        }
        let mut data = Vec::with_capacity(b * c_total * h * w);
        for bi in 0..b {
            for &p in parts {
                data.extend_from_slice(self.value(p).sample(bi));
            }
        }
        let y = Tensor::new([b, c_total, h, w], data)?;
        Ok(self.push(y, Op::Concat { parts: parts.to_vec() }, parts))
    }

    /// Fixed second-order derivative stencil of every plane (not learnable).
    pub fn stencil_derivative(&mut self, x: Var, axis: Axis, h: f64) -> Var {
        let [_, _, rows, cols] = self.shape(x);
        let xv = self.value(x);
        let mut y = Tensor::zeros(xv.shape());
        for (src, dst) in xv.data().chunks(rows * cols).zip(y.data_mut().chunks_mut(rows * cols)) {
            stencil::derivative_2d(src, rows, cols, h, axis, dst);
        }
        self.push(y, Op::Stencil { x, axis, h }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::Sum { x }, &[x])
    }

    pub fn l2norm(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64().powi(2)).sum();
        self.push(Tensor::scalar(T::of(s.sqrt())), Op::L2Norm { x }, &[x])
    }

    /// `‖x_b‖₂` for each batch entry, shape `(b, 1, 1, 1)`.
    pub fn l2norm_per_sample(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let b = xv.batch();
        let data = (0..b).map(|i| T::of(xv.sample(i).iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt())).collect();
        let y = Tensor::new([b, 1, 1, 1], data).expect("shape");
        self.push(y, Op::L2NormPerSample { x }, &[x])
    }

    /// Multiplies batch entry `b` by the constant `factors[b]`.
    pub fn scale_per_sample(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if factors.len() != xv.batch() {
            return Err(shape_err(format!("{} factors for batch of {}", factors.len(), xv.batch())));
        }
        let n = xv.sample_len();
        let mut y = xv.clone();
        for (chunk, &f) in y.data_mut().chunks_mut(n).zip(factors) {
            let ft = T::of(f);
            chunk.iter_mut().for_each(|v| *v = *v * ft);
        }
        Ok(self.push(y, Op::ScalePerSample { x, factors: factors.to_vec() }, &[x]))
    }

    /// Zero-pads on the high side of both spatial axes up to `(h, w)`.
    pub fn pad(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [b, c, h0, w0] = self.shape(x);
        if h < h0 || w < w0 {
            return Err(shape_err(format!("cannot pad {h0}x{w0} to {h}x{w}")));
        }
        let mut y = Tensor::zeros([b, c, h, w]);
        copy_window(self.value(x).data(), h0, w0, y.data_mut(), h, w, b * c, h0, w0);
        Ok(self.push(y, Op::Pad { x }, &[x]))
    }

    /// Keeps the low `(h, w)` corner of both spatial axes.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [b, c, h0, w0] = self.shape(x);
        if h > h0 || w > w0 {
            return Err(shape_err(format!("cannot crop {h0}x{w0} to {h}x{w}")));
        }
        let mut y = Tensor::zeros([b, c, h, w]);
        copy_window(self.value(x).data(), h0, w0, y.data_mut(), h, w, b * c, h, w);
        Ok(self.push(y, Op::Crop { x }, &[x]))
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.nodes.iter().position(|n| !n.value.is_finite())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(shape_err(format!("backward needs a scalar root, got {:?}", root.value.shape())));
        }
        if !root.value.is_finite() {
            return Err(Error::NonFinite { node: self.first_non_finite().unwrap_or(loss.0) });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { node: id });
            }
            for (parent, contrib) in self.contributions(node, g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite { node: id });
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn bias_grad(g: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w] = g.shape();
        let plane = h * w;
        let mut acc = vec![0.0f64; c];
        for bi in 0..b {
            for (ci, a) in acc.iter_mut().enumerate() {
                *a += g.data()[(bi * c + ci) * plane..][..plane].iter().map(|v| v.f64()).sum::<f64>();
            }
        }
        Tensor::new([c, 1, 1, 1], acc.into_iter().map(T::of).collect()).expect("shape")
    }

    /// Runs a per-sample conv backward in parallel and sums weight gradients in batch order.
    fn conv_grads(&self, x: Var, w: Var, g: &Tensor<T>, transposed: bool, plan: Plan) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
        let xv = self.value(x);
        let wv = self.value(w);
        let (want_dx, want_dw) = (self.needs(x), self.needs(w));
        let batch = xv.batch();
        let x_len = xv.sample_len();
        let w_len = wv.len();
        let mut dx = want_dx.then(|| Tensor::zeros(xv.shape()));
        let n = plan.col_len();
        let run = |col: &mut Scratch<'_, T>, bi: usize, dxb: Option<&mut [T]>| -> Option<Vec<T>> {
            let col = &mut col.buf[..n];
            let mut dwb = want_dw.then(|| vec![T::zero(); w_len]);
            let (xb, gb) = (xv.sample(bi), g.sample(bi));
            if transposed {
                plan.convt_backward(xb, wv.data(), gb, dxb, dwb.as_deref_mut(), col);
            } else {
                plan.conv_backward(xb, wv.data(), gb, dxb, dwb.as_deref_mut(), col);
            }
            dwb
        };
        let init = || self.scratch(n);
        let per_sample: Vec<Option<Vec<T>>> = match dx.as_mut() {
            Some(dx) => dx.data_mut().par_chunks_mut(x_len).enumerate().map_init(init, |col, (bi, dxb)| run(col, bi, Some(dxb))).collect(),
            None => (0..batch).into_par_iter().map_init(init, |col, bi| run(col, bi, None)).collect(),
        };
        let dw = want_dw.then(|| {
            let mut acc = vec![T::zero(); w_len];
            for part in per_sample.iter().flatten() {
                for (a, &p) in acc.iter_mut().zip(part) {
                    *a = *a + p;
                }
            }
            Tensor::new(wv.shape(), acc).expect("shape")
        });
        (dx, dw)
    }

    fn contributions(&self, node: &Node<T>, g: Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        match &node.op {
            Op::Relu { x } => {
                let mut dx = g;
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if !(y > T::zero()) {
                        *d = T::zero();
                    }
                }
                return vec![(*x, dx)];
            }
            Op::Add { a, b } => return vec![(*a, g.clone()), (*b, g)],
            Op::Sub { a, b } => {
                let neg = g.map(|v| -v);
                return vec![(*a, g), (*b, neg)];
            }
            _ => {}
        }
        let g = &g;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Relu { .. } | Op::Add { .. } | Op::Sub { .. } => {}
            Op::Conv { x, w, b, plan } | Op::ConvT { x, w, b, plan } => {
                let transposed = matches!(node.op, Op::ConvT { .. });
                let (dx, dw) = self.conv_grads(*x, *w, g, transposed, *plan);
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut bg = Self::bias_grad(g);
                        bg = Tensor::new(self.shape(*b), bg.into_data()).expect("bias shape");
                        out.push((*b, bg));
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, invstd, train } => {
                let [b, c, h, w] = g.shape();
                let plane = h * w;
                let count = (b * plane) as f64;
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (idx, (gc, xc)) in g.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
                    let (sg, sgx) = lane_sum_pair(gc, xc);
                    sum_g[idx % c] += sg;
                    sum_gx[idx % c] += sgx;
                }
                let gam: Vec<f64> = self.value(*gamma).data().iter().map(|v| v.f64()).collect();
                if self.needs(*x) {
                    let mut dx = g.clone();
                    for (idx, (dc, xc)) in dx.data_mut().chunks_mut(plane).zip(xhat.data().chunks(plane)).enumerate() {
                        let ci = idx % c;
                        let scale = gam[ci] * invstd[ci];
                        if *train {
                            let (mg, mgx) = (sum_g[ci] / count, sum_gx[ci] / count);
                            for (d, &xv) in dc.iter_mut().zip(xc) {
                                *d = T::of(scale * (d.f64() - mg - xv.f64() * mgx));
                            }
                        } else {
                            dc.iter_mut().for_each(|d| *d = T::of(scale * d.f64()));
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gamma) {
                    out.push((*gamma, Tensor::new(self.shape(*gamma), sum_gx.iter().map(|&v| T::of(v)).collect()).expect("shape")));
                }
                if self.needs(*beta) {
                    out.push((*beta, Tensor::new(self.shape(*beta), sum_g.iter().map(|&v| T::of(v)).collect()).expect("shape")));
                }
            }
            Op::Scale { x, s } => {
                let st = T::of(*s);
                out.push((*x, g.map(|v| v * st)));
            }
            Op::Concat { parts } => {
                let [b, _, h, w] = g.shape();
                let plane = h * w;
                let c_total = g.channels();
                let mut c0 = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    let mut d = Tensor::zeros(self.shape(p));
                    for bi in 0..b {
                        let src = &g.data()[(bi * c_total + c0) * plane..][..pc * plane];
                        d.data_mut()[bi * pc * plane..][..pc * plane].copy_from_slice(src);
                    }
                    out.push((p, d));
                    c0 += pc;
                }
            }
            Op::Stencil { x, axis, h } => {
                let [_, _, rows, cols] = g.shape();
                let mut dx = Tensor::zeros(g.shape());
                for (src, dst) in g.data().chunks(rows * cols).zip(dx.data_mut().chunks_mut(rows * cols)) {
                    stencil::derivative_2d_transpose_add(src, rows, cols, *h, *axis, dst);
                }
                out.push((*x, dx));
            }
            Op::Sum { x } => {
                out.push((*x, Tensor::full(self.shape(*x), g.data()[0])));
            }
            Op::L2Norm { x } => {
                let n = node.value.data()[0].f64();
                let gs = g.data()[0].f64();
                let xv = self.value(*x);
                let f = if n > 0.0 { gs / n } else { 0.0 };
                out.push((*x, xv.map(|v| T::of(v.f64() * f))));
            }
            Op::L2NormPerSample { x } => {
                let xv = self.value(*x);
                let n = xv.sample_len();
                let mut dx = xv.clone();
                for (bi, chunk) in dx.data_mut().chunks_mut(n).enumerate() {
                    let norm = node.value.data()[bi].f64();
                    let f = if norm > 0.0 { g.data()[bi].f64() / norm } else { 0.0 };
                    chunk.iter_mut().for_each(|v| *v = T::of(v.f64() * f));
                }
                out.push((*x, dx));
            }
            Op::ScalePerSample { x, factors } => {
                let n = g.sample_len();
                let mut dx = g.clone();
                for (chunk, &f) in dx.data_mut().chunks_mut(n).zip(factors) {
                    let ft = T::of(f);
                    chunk.iter_mut().for_each(|v| *v = *v * ft);
                }
                out.push((*x, dx));
            }
            Op::Pad { x } => {
                let [b, c, h0, w0] = self.shape(*x);
                let [_, _, h, w] = g.shape();
                let mut dx = Tensor::zeros(self.shape(*x));
                copy_window(g.data(), h, w, dx.data_mut(), h0, w0, b * c, h0, w0);
                out.push((*x, dx));
            }
            Op::Crop { x } => {
                let [b, c, h0, w0] = self.shape(*x);
                let [_, _, h, w] = g.shape();
                let mut dx = Tensor::zeros(self.shape(*x));
                copy_window(g.data(), h, w, dx.data_mut(), h0, w0, b * c, h, w);
                out.push((*x, dx));
            }
        }
        out
    }
}

/// Sum of `f` over `xs` with four interleaved accumulators.
fn lane_sum<T: Copy>(xs: &[T], f: impl Fn(T) -> f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks = xs.chunks_exact(4);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += f(v);
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|&v| f(v)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `(Σ g, Σ g·x)` with the same accumulation pattern as [`lane_sum`].
fn lane_sum_pair<T: Real>(g: &[T], x: &[T]) -> (f64, f64) {
    let (mut sg, mut sgx) = ([0.0f64; 4], [0.0f64; 4]);
    let (mut gc, mut xc) = (g.chunks_exact(4), x.chunks_exact(4));
    for (a, b) in (&mut gc).zip(&mut xc) {
        for l in 0..4 {
            let gv = a[l].f64();
            sg[l] += gv;
            sgx[l] += gv * b[l].f64();
        }
    }
    let (mut tg, mut tgx) = (0.0, 0.0);
    for (&a, &b) in gc.remainder().iter().zip(xc.remainder()) {
        tg += a.f64();
        tgx += a.f64() * b.f64();
    }
    ((sg[0] + sg[1]) + (sg[2] + sg[3]) + tg, (sgx[0] + sgx[1]) + (sgx[2] + sgx[3]) + tgx)
}

/// Copies the low `(rows, cols)` window of each of `planes` planes between layouts.
#[allow(clippy::too_many_arguments)]
fn copy_window<T: Copy>(src: &[T], sh: usize, sw: usize, dst: &mut [T], dh: usize, dw: usize, planes: usize, rows: usize, cols: usize) {
    for p in 0..planes {
        for r in 0..rows {
            let s = &src[p * sh * sw + r * sw..][..cols];
            dst[p * dh * dw + r * dw..][..cols].copy_from_slice(s);
        }
    }
}
