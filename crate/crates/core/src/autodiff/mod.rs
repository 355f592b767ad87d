//! Minimal reverse-mode differentiation over rank-4 tensors.
//!
//! A [`Tape`] records every operation in execution order. [`Tape::backward`]
//! walks the records in exact reverse order and accumulates gradients
//! additively, so a value consumed `k` times receives the sum of `k`
//! contributions.

pub(crate) mod conv;
mod gradcheck;

pub use gradcheck::{grad_check, grad_check_with_step, GradCheckReport};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{lit, Real, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn cast<U: Real>(&self) -> BnState<U> {
        BnState {
            mean: self.mean.iter().map(|&v| lit(v.to_f64())).collect(),
            var: self.var.iter().map(|&v| lit(v.to_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BnConfig {
    /// Weight kept on the old running statistic per update.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

pub enum BnMode<'a, T> {
    /// Normalize with batch statistics and fold them into `state`.
    Train(&'a mut BnState<T>),
    /// Normalize with the stored running statistics.
    Infer(&'a BnState<T>),
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Concat {
        a: Var,
        b: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    ChannelAffine {
        x: Var,
        scale: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d_dilated",
            Op::Relu { .. } => "relu",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Concat { .. } => "concat_channels",
            Op::MaxPool { .. } => "max_pool_2x2",
            Op::Mse { .. } => "mse_loss",
            Op::Scale { .. } => "scale",
            Op::Add { .. } => "add",
            Op::Sum { .. } => "sum",
            Op::ChannelAffine { .. } => "channel_affine",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input: gradients are collected for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Name of the first operation whose output contains NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes
            .iter()
            .find(|n| !n.value.all_finite())
            .map(|n| n.op.name())
    }

    pub fn conv2d_dilated(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
    ) -> Result<Var> {
        conv::check_conv_shapes(
            self.shape(x),
            self.shape(w),
            b.map(|b| self.shape(b)),
            dilation,
        )?;
        let out = conv::forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            dilation,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv { x, w, b, dilation }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
        cfg: BnConfig,
    ) -> Result<Var> {
        let s = self.shape(x);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).len() != s.c {
                return Err(shape_err(
                    "batch_norm",
                    format!("{name} length {} != channels {}", self.value(v).len(), s.c),
                ));
            }
        }
        let count = s.n * s.plane();
        if count == 0 {
            return Err(shape_err("batch_norm", "zero-element channel"));
        }
        let state_len = match &mode {
            BnMode::Train(st) => (st.mean.len(), st.var.len()),
            BnMode::Infer(st) => (st.mean.len(), st.var.len()),
        };
        if state_len != (s.c, s.c) {
            return Err(shape_err(
                "batch_norm",
                format!(
                    "running statistics length {state_len:?} != channels {}",
                    s.c
                ),
            ));
        }

        let eps: T = lit(cfg.eps);
        let xv = self.value(x);
        let mut mean = vec![T::zero(); s.c];
        let mut var = vec![T::zero(); s.c];
        let batch_stats = matches!(mode, BnMode::Train(_));
        match &mode {
            BnMode::Train(_) => {
                let inv_count: T = lit(1.0 / count as f64);
                for c in 0..s.c {
                    let mut acc = T::zero();
                    for n in 0..s.n {
                        acc += xv.plane(n, c).iter().copied().sum::<T>();
                    }
                    mean[c] = acc * inv_count;
                    let mut acc = T::zero();
                    for n in 0..s.n {
                        acc += xv
                            .plane(n, c)
                            .iter()
                            .map(|&v| (v - mean[c]) * (v - mean[c]))
                            .sum::<T>();
                    }
                    var[c] = acc * inv_count;
                }
            }
            BnMode::Infer(st) => {
                mean.copy_from_slice(&st.mean);
                var.copy_from_slice(&st.var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let mut xhat = vec![T::zero(); s.numel()];
        let mut out = vec![T::zero(); s.numel()];
        let p = s.plane();
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * p;
                for (k, &v) in xv.plane(n, c).iter().enumerate() {
                    let h = (v - mean[c]) * inv_std[c];
                    xhat[base + k] = h;
                    out[base + k] = g[c] * h + bt[c];
                }
            }
        }
        if let BnMode::Train(st) = mode {
            let m: T = lit(cfg.momentum);
            for c in 0..s.c {
                st.mean[c] = m * st.mean[c] + (T::one() - m) * mean[c];
                st.var[c] = m * st.var[c] + (T::one() - m) * var[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let out = Tensor::new(s, out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(shape_err(
                "concat_channels",
                format!("batch/spatial mismatch {sa} vs {sb}"),
            ));
        }
        let s = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let p = s.plane();
        let mut data = Vec::with_capacity(s.numel());
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for n in 0..s.n {
            data.extend_from_slice(&av[n * sa.c * p..(n + 1) * sa.c * p]);
            data.extend_from_slice(&bv[n * sb.c * p..(n + 1) * sb.c * p]);
        }
        let rg = self.rg(a) || self.rg(b);
        let out = Tensor::new(s, data)?;
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    /// 2x2 window, stride 2. Ties resolve to the first element in row-major
    /// order.
    pub fn max_pool_2x2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
            return Err(shape_err(
                "max_pool_2x2",
                format!("spatial dims must be even, got {}x{}", s.h, s.w),
            ));
        }
        let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(os.numel());
        let mut argmax = Vec::with_capacity(os.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                for i in 0..os.h {
                    for j in 0..os.w {
                        let mut best = xv.index(n, c, 2 * i, 2 * j);
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let k = xv.index(n, c, 2 * i + di, 2 * j + dj);
                            if xv.data()[k] > xv.data()[best] {
                                best = k;
                            }
                        }
                        out.push(xv.data()[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let rg = self.rg(x);
        let out = Tensor::new(os, out)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    /// Mean of squared differences, as a `(1,1,1,1)` tensor.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mse_loss", format!("{sa} vs {sb}")));
        }
        let sq: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum();
        let v = sq / lit(sa.numel() as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Mse { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, factor }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", format!("{sa} vs {sb}")));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Sum { x }, rg)
    }

    /// `y[:, c] = x[:, c] * scale - shift[c]` with constant `scale`, `shift`.
    pub fn channel_affine(&mut self, x: Var, scale: T, shift: &[T]) -> Result<Var> {
        let s = self.shape(x);
        if shift.len() != s.c {
            return Err(shape_err(
                "channel_affine",
                format!("shift length {} != channels {}", shift.len(), s.c),
            ));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(s.numel());
        for n in 0..s.n {
            for (c, &sh) in shift.iter().enumerate() {
                data.extend(xv.plane(n, c).iter().map(|&v| v * scale - sh));
            }
        }
        let rg = self.rg(x);
        let out = Tensor::new(s, data)?;
        Ok(self.push(out, Op::ChannelAffine { x, scale }, rg))
    }

    /// Reverse pass from a scalar `root`. Previously stored gradients are
    /// discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rs = self.shape(root);
        if rs != Shape::scalar() {
            return Err(invalid(format!("backward root must be a scalar, got {rs}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (target, contrib) in self.node_backward(idx, &g) {
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn node_backward(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, dilation } => {
                if self.rg(*x) {
                    let dx = conv::backward_input(g, self.value(*w), self.shape(*x), *dilation);
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    let dw = conv::backward_weight(g, self.value(*x), self.shape(*w), *dilation);
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = conv::backward_bias(g);
                        reshape_like(&mut db, self.shape(*b));
                        out.push((*b, db));
                    }
                }
            }
            Op::Relu { x } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = g.shape();
                let p = s.plane();
                let gam = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); s.c];
                let mut sum_dy_xhat = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * p;
                        for (k, &d) in g.plane(n, c).iter().enumerate() {
                            sum_dy[c] += d;
                            sum_dy_xhat[c] += d * xhat[base + k];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(s);
                    let m: T = lit((s.n * p) as f64);
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let base = (n * s.c + c) * p;
                            let k0 = gam[c] * inv_std[c];
                            for k in 0..p {
                                let d = g.data()[base + k];
                                dx.data_mut()[base + k] = if *batch_stats {
                                    k0 * (d - sum_dy[c] / m - xhat[base + k] * sum_dy_xhat[c] / m)
                                } else {
                                    k0 * d
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                if self.rg(*gamma) {
                    let t =
                        Tensor::new(self.shape(*gamma), sum_dy_xhat.clone()).expect("gamma shape");
                    out.push((*gamma, t));
                }
                if self.rg(*beta) {
                    let t = Tensor::new(self.shape(*beta), sum_dy).expect("beta shape");
                    out.push((*beta, t));
                }
            }
            Op::Concat { a, b } => {
                let sa = self.shape(*a);
                if self.rg(*a) {
                    out.push((*a, g.slice_channels(0, sa.c).expect("concat split")));
                }
                if self.rg(*b) {
                    let sb = self.shape(*b);
                    out.push((*b, g.slice_channels(sa.c, sb.c).expect("concat split")));
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(self.shape(*x));
                    for (&k, &d) in argmax.iter().zip(g.data()) {
                        dx.data_mut()[k] += d;
                    }
                    out.push((*x, dx));
                }
            }
            Op::Mse { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let k = g.item() * lit(2.0 / av.len() as f64);
                let diff: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&p, &q)| k * (p - q))
                    .collect();
                if self.rg(*a) {
                    out.push((
                        *a,
                        Tensor::new(av.shape(), diff.clone()).expect("mse shape"),
                    ));
                }
                if self.rg(*b) {
                    let neg = diff.into_iter().map(|v| -v).collect();
                    out.push((*b, Tensor::new(bv.shape(), neg).expect("mse shape")));
                }
            }
            Op::Scale { x, factor } => {
                if self.rg(*x) {
                    out.push((*x, g.map(|v| v * *factor)));
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    out.push((*a, g.clone()));
                }
                if self.rg(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sum { x } => {
                if self.rg(*x) {
                    out.push((*x, Tensor::full(self.shape(*x), g.item())));
                }
            }
            Op::ChannelAffine { x, scale } => {
                if self.rg(*x) {
                    out.push((*x, g.map(|v| v * *scale)));
                }
            }
        }
        out
    }

    /// Fails with the first operation that produced a non-finite value.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }
}

fn reshape_like<T: Real>(t: &mut Tensor<T>, shape: Shape) {
    if t.shape() != shape {
        let data = std::mem::replace(t, Tensor::scalar(T::zero())).into_data();
        *t = Tensor::new(shape, data).expect("same element count");
    }
}
