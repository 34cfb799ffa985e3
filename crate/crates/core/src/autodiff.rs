//! Reverse-mode automatic differentiation over a single-use tape.
//!
//! Every primitive appends a node holding its forward value. Calling
//! [`Tape::backward`] walks the nodes in reverse, accumulates adjoints, and
//! returns one gradient per leaf registered with `requires_grad`. The tape is
//! consumed by that call: its activations are released and any later use is a
//! state error.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{config_err, dim_err, Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeometry, batch: usize },
    Relu(Var),
    MaxPool2 { input: Var, argmax: Vec<u32> },
    GlobalAvgPool(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Dense { input: Var, weight: Var, bias: Var },
    LogSoftmax(Var),
    CrossEntropy { input: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients keyed by the leaf they differentiate.
#[derive(Clone, Debug, Default)]
pub struct GradientSet {
    grads: BTreeMap<Var, Tensor>,
}

impl GradientSet {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor. Leaves with `requires_grad` receive a
    /// gradient from [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        assert!(!self.consumed, "leaf registered on a consumed tape");
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad, requires_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Forward value of `var`.
    ///
    /// Panics if `var` belongs to another tape or the tape was consumed.
    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "variable from a different tape");
        assert!(!self.consumed, "tape already consumed by backward");
        &self.nodes[var.index].value
    }

    fn check(&self, vars: &[Var]) -> Result<()> {
        if self.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        if vars.iter().any(|v| v.tape != self.id) {
            return Err(Error::State("variable recorded on a different tape".into()));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.index].needs_grad);
        self.nodes.push(Node { value, op, needs_grad, requires_grad: false });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.index].value.shape()
    }

    /// 2-D cross-correlation of `[N,C,H,W]` input with `[F,C,kH,kW]` kernels.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        self.check(&[input, kernel, bias])?;
        let (xs, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if xs.len() != 4 {
            return Err(dim_err("conv2d", format!("input must be rank 4 [N,C,H,W], got {xs:?}")));
        }
        if ks.len() != 4 {
            return Err(dim_err("conv2d", format!("kernel must be rank 4 [F,C,kH,kW], got {ks:?}")));
        }
        if ks[1] != xs[1] {
            return Err(dim_err(
                "conv2d",
                format!("channel axis: input has {} channels, kernel expects {}", xs[1], ks[1]),
            ));
        }
        if bs != [ks[0]] {
            return Err(dim_err("conv2d", format!("bias axis: expected [{}], got {bs:?}", ks[0])));
        }
        if stride == 0 {
            return Err(config_err("conv2d stride must be at least 1"));
        }
        let (h, w, kh, kw) = (xs[2], xs[3], ks[2], ks[3]);
        if kh > h + 2 * pad {
            return Err(dim_err("conv2d", format!("height axis: kernel {kh} exceeds padded input {}", h + 2 * pad)));
        }
        if kw > w + 2 * pad {
            return Err(dim_err("conv2d", format!("width axis: kernel {kw} exceeds padded input {}", w + 2 * pad)));
        }
        if (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 {
            return Err(config_err(format!(
                "conv2d output size is not integral for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        let geom = ConvGeometry {
            channels: xs[1],
            height: h,
            width: w,
            filters: ks[0],
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let batch = xs[0];
        let out = kernels::conv2d_forward(
            &geom,
            batch,
            self.nodes[input.index].value.data(),
            self.nodes[kernel.index].value.data(),
            self.nodes[bias.index].value.data(),
        );
        let value = Tensor::new(vec![batch, geom.filters, geom.out_h, geom.out_w], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom, batch }, &[input, kernel, bias]))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check(&[input])?;
        let value = self.nodes[input.index].value.map(|v| if v > 0.0 { v } else { 0.0 });
        Ok(self.push(value, Op::Relu(input), &[input]))
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        self.check(&[input])?;
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(dim_err("max_pool2", format!("input must be rank 4, got {xs:?}")));
        }
        let (h, w) = (xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(config_err(format!("max_pool2 needs even spatial dims, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let planes = xs[0] * xs[1];
        let src = self.nodes[input.index].value.data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for idx in [base + 2 * i * w + 2 * j + 1, base + (2 * i + 1) * w + 2 * j, base + (2 * i + 1) * w + 2 * j + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, &[input]))
    }

    /// Mean over the spatial axes: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check(&[input])?;
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(dim_err("global_avg_pool", format!("input must be rank 4, got {xs:?}")));
        }
        let area = xs[2] * xs[3];
        let src = self.nodes[input.index].value.data();
        let out = src.chunks_exact(area).map(|c| c.iter().sum::<f64>() / area as f64).collect();
        let value = Tensor::new(vec![xs[0], xs[1]], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(input), &[input]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let (x, y) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
        if x.shape() != y.shape() {
            return Err(dim_err("add", format!("shapes {:?} and {:?} differ", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let (x, y) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
        if x.shape() != y.shape() {
            return Err(dim_err("mul", format!("shapes {:?} and {:?} differ", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.check(&[input])?;
        let value = self.nodes[input.index].value.map(|v| v * factor);
        Ok(self.push(value, Op::Scale(input, factor), &[input]))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check(&[input])?;
        let total = self.nodes[input.index].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(input), &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        self.check(&[input])?;
        let value = self.nodes[input.index].value.clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input), &[input]))
    }

    /// Affine map `[N,D]·[D,K] + [K]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.check(&[input, weight, bias])?;
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 {
            return Err(dim_err("dense", format!("expected [N,D]·[D,K], got {xs:?}·{ws:?}")));
        }
        if xs[1] != ws[0] {
            return Err(dim_err("dense", format!("feature axis: input has {}, weight expects {}", xs[1], ws[0])));
        }
        if bs != [ws[1]] {
            return Err(dim_err("dense", format!("bias axis: expected [{}], got {bs:?}", ws[1])));
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(self.nodes[bias.index].value.data());
        }
        kernels::gemm(
            n,
            d,
            k,
            self.nodes[input.index].value.data(),
            false,
            self.nodes[weight.index].value.data(),
            false,
            1.0,
            &mut out,
        );
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::Dense { input, weight, bias }, &[input, weight, bias]))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        self.check(&[input])?;
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 || xs[1] < 2 {
            return Err(dim_err("log_softmax", format!("expected [N,K] with K >= 2, got {xs:?}")));
        }
        let value = log_softmax_rows(&self.nodes[input.index].value);
        Ok(self.push(value, Op::LogSoftmax(input), &[input]))
    }

    /// Mean negative log-likelihood of `labels` under row log-probabilities.
    pub fn cross_entropy(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        self.check(&[log_probs])?;
        let xs = self.shape(log_probs).to_vec();
        if xs.len() != 2 {
            return Err(dim_err("cross_entropy", format!("expected [N,K], got {xs:?}")));
        }
        if labels.len() != xs[0] {
            return Err(dim_err(
                "cross_entropy",
                format!("batch axis: {} rows but {} labels", xs[0], labels.len()),
            ));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= xs[1]) {
            return Err(Error::Index(format!("label {l} at position {i} is outside [0, {})", xs[1])));
        }
        let lp = &self.nodes[log_probs.index].value;
        let total: f64 = labels.iter().enumerate().map(|(i, &l)| lp.data()[i * xs[1] + l]).sum();
        let value = Tensor::scalar(-total / xs[0] as f64);
        Ok(self.push(value, Op::CrossEntropy { input: log_probs, labels: labels.to_vec() }, &[log_probs]))
    }

    /// Differentiates the scalar `loss` and consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<GradientSet> {
        self.check(&[loss])?;
        if self.nodes[loss.index].value.len() != 1 {
            return Err(dim_err(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.consumed = true;
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.index] = Some(vec![1.0]);

        for idx in (0..=loss.index).rev() {
            if !self.nodes[idx].needs_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(dy) = adj[idx].take() else { continue };
            self.propagate(idx, &dy, &mut adj);
        }

        let mut grads = BTreeMap::new();
        for (index, node) in self.nodes.iter().enumerate() {
            if node.requires_grad {
                let data = adj[index].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                grads.insert(Var { tape: self.id, index }, Tensor::new(node.value.shape().to_vec(), data)?);
            }
        }
        self.nodes.clear();
        Ok(GradientSet { grads })
    }

    fn propagate(&self, idx: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom, batch } => {
                let x = self.nodes[input.index].value.data();
                let k = self.nodes[kernel.index].value.data();
                let mut gx = self.grad_slot(*input, adj);
                let mut gk = self.grad_slot(*kernel, adj);
                let mut gb = self.grad_slot(*bias, adj);
                kernels::conv2d_backward(
                    geom,
                    *batch,
                    x,
                    k,
                    dy,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                self.restore(*input, gx, adj);
                self.restore(*kernel, gk, adj);
                self.restore(*bias, gb, adj);
            }
            Op::Relu(input) => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    for ((acc, &d), &y) in g.iter_mut().zip(dy).zip(node.value.data()) {
                        if y > 0.0 {
                            *acc += d;
                        }
                    }
                    self.restore(*input, Some(g), adj);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    for (&src, &d) in argmax.iter().zip(dy) {
                        g[src as usize] += d;
                    }
                    self.restore(*input, Some(g), adj);
                }
            }
            Op::GlobalAvgPool(input) => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    let xs = self.shape(*input);
                    let area = xs[2] * xs[3];
                    for (chunk, &d) in g.chunks_exact_mut(area).zip(dy) {
                        let share = d / area as f64;
                        chunk.iter_mut().for_each(|v| *v += share);
                    }
                    self.restore(*input, Some(g), adj);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(mut g) = self.grad_slot(v, adj) {
                        g.iter_mut().zip(dy).for_each(|(acc, d)| *acc += d);
                        self.restore(v, Some(g), adj);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if let Some(mut g) = self.grad_slot(v, adj) {
                        let o = self.nodes[other.index].value.data();
                        for ((acc, d), w) in g.iter_mut().zip(dy).zip(o) {
                            *acc += d * w;
                        }
                        self.restore(v, Some(g), adj);
                    }
                }
            }
            Op::Scale(input, factor) => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    g.iter_mut().zip(dy).for_each(|(acc, d)| *acc += d * factor);
                    self.restore(*input, Some(g), adj);
                }
            }
            Op::Sum(input) => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    g.iter_mut().for_each(|acc| *acc += dy[0]);
                    self.restore(*input, Some(g), adj);
                }
            }
            Op::Reshape(input) => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    g.iter_mut().zip(dy).for_each(|(acc, d)| *acc += d);
                    self.restore(*input, Some(g), adj);
                }
            }
            Op::Dense { input, weight, bias } => {
                let xs = self.shape(*input);
                let (n, d) = (xs[0], xs[1]);
                let k = self.shape(*weight)[1];
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    // dX[N×D] += dY[N×K] · Wᵀ[K×D]
                    kernels::gemm(n, k, d, dy, false, self.nodes[weight.index].value.data(), true, 1.0, &mut g);
                    self.restore(*input, Some(g), adj);
                }
                if let Some(mut g) = self.grad_slot(*weight, adj) {
                    // dW[D×K] += Xᵀ[D×N] · dY[N×K]
                    kernels::gemm(d, n, k, self.nodes[input.index].value.data(), true, dy, false, 1.0, &mut g);
                    self.restore(*weight, Some(g), adj);
                }
                if let Some(mut g) = self.grad_slot(*bias, adj) {
                    for row in dy.chunks_exact(k) {
                        g.iter_mut().zip(row).for_each(|(acc, d)| *acc += d);
                    }
                    self.restore(*bias, Some(g), adj);
                }
            }
            Op::LogSoftmax(input) => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    let k = node.value.shape()[1];
                    for ((acc, d), y) in g.chunks_exact_mut(k).zip(dy.chunks_exact(k)).zip(node.value.data().chunks_exact(k)) {
                        let total: f64 = d.iter().sum();
                        for j in 0..k {
                            acc[j] += d[j] - libm::exp(y[j]) * total;
                        }
                    }
                    self.restore(*input, Some(g), adj);
                }
            }
            Op::CrossEntropy { input, labels } => {
                if let Some(mut g) = self.grad_slot(*input, adj) {
                    let k = self.shape(*input)[1];
                    let share = dy[0] / labels.len() as f64;
                    for (i, &l) in labels.iter().enumerate() {
                        g[i * k + l] -= share;
                    }
                    self.restore(*input, Some(g), adj);
                }
            }
        }
    }

    /// Takes the adjoint buffer of `v` (allocating zeros) if `v` needs a gradient.
    fn grad_slot(&self, v: Var, adj: &mut [Option<Vec<f64>>]) -> Option<Vec<f64>> {
        let node = &self.nodes[v.index];
        if !node.needs_grad {
            return None;
        }
        Some(adj[v.index].take().unwrap_or_else(|| vec![0.0; node.value.len()]))
    }

    fn restore(&self, v: Var, g: Option<Vec<f64>>, adj: &mut [Option<Vec<f64>>]) {
        if g.is_some() {
            adj[v.index] = g;
        }
    }
}

/// Row-wise `x - max - ln Σ exp(x - max)` over a `[N,K]` tensor.
pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        out.extend(row.iter().map(|&v| v - max - lse));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("shape preserved")
}
