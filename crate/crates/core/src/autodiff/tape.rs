//! Tape-based reverse-mode differentiation.
//!
//! Every primitive applied to a [`Var`] appends a node to its [`Tape`]. Nodes are
//! created in topological order, so `backward` is a single reverse sweep over the
//! tape that visits each record exactly once. A tape lives for one forward pass
//! and is dropped after the backward pass.

use std::cell::{Ref, RefCell};

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norm below which `l2_normalize` refuses to project a row.
pub const EPSILON_NORM: f64 = 1e-12;

/// Geometry of a 2-D cross-correlation over an `N×C×H×W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }
}

/// The operation recorded on a tape node together with the intermediates its
/// backward rule needs.
#[derive(Debug)]
pub enum Op {
    MatMul { m: usize, k: usize, n: usize },
    Transpose { rows: usize, cols: usize },
    Conv2d { geom: ConvGeom, cols: Vec<f64> },
    Add,
    AddRowBias { cols: usize },
    Scale(f64),
    Tanh,
    Relu,
    L2Normalize { cols: usize, norms: Vec<f64> },
    Dot,
    Abs,
    Mean,
    SoftmaxCrossEntropy { classes: usize, probs: Vec<f64>, labels: Vec<usize> },
    AvgPool { channels: usize, area: usize },
}

/// A computation record: operation, input node ids and saved state.
#[derive(Debug)]
pub struct Record {
    pub op: Op,
    pub inputs: Vec<usize>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Accumulated gradient; only leaves keep one across `backward` calls.
    grad: Option<Vec<f64>>,
    record: Option<Record>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            record: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of nodes carrying a computation record.
    pub fn record_count(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| n.record.is_some())
            .count()
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn any_requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires_grad = self.any_requires_grad(inputs);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            record: requires_grad.then(|| Record {
                op,
                inputs: inputs.to_vec(),
            }),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// The single value of a scalar node.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf after `backward`.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value shape")
        })
    }

    fn check_same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        let (out, m, k, n) = {
            let a = self.value();
            let b = rhs.value();
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::shape("matmul", &[sa, sb]));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
            (Tensor::new(vec![m, n], c)?, m, k, n)
        };
        Ok(self
            .tape
            .push(out, Op::MatMul { m, k, n }, &[self.id, rhs.id]))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let (out, rows, cols) = {
            let a = self.value();
            if a.shape().len() != 2 {
                return Err(Error::shape("transpose", &[a.shape()]));
            }
            let (r, c) = (a.shape()[0], a.shape()[1]);
            (
                Tensor::new(vec![c, r], transpose(r, c, a.data()))?,
                r,
                c,
            )
        };
        Ok(self.tape.push(out, Op::Transpose { rows, cols }, &[self.id]))
    }

    /// Cross-correlation of an `N×C×H×W` input with an `O×C×K×K` kernel, with
    /// symmetric zero padding and a stride; `bias` has shape `[O]`.
    pub fn conv2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        self.check_same_tape(&weight);
        let mut inputs = vec![self.id, weight.id];
        if let Some(b) = bias {
            self.check_same_tape(&b);
            inputs.push(b.id);
        }
        let keep_cols = self.tape.nodes.borrow()[weight.id].requires_grad;
        let (out, geom, cols) = {
            let x = self.value();
            let w = weight.value();
            let (sx, sw) = (x.shape(), w.shape());
            let bad = || Error::shape("conv2d", &[sx, sw]);
            if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || stride == 0 {
                return Err(bad());
            }
            let (kernel, height, width) = (sw[2], sx[2], sx[3]);
            if height + 2 * padding < kernel || width + 2 * padding < kernel {
                return Err(bad());
            }
            let geom = ConvGeom {
                batch: sx[0],
                in_channels: sx[1],
                height,
                width,
                out_channels: sw[0],
                kernel,
                stride,
                padding,
                out_height: (height + 2 * padding - kernel) / stride + 1,
                out_width: (width + 2 * padding - kernel) / stride + 1,
            };
            let bias_val = match bias {
                Some(b) => {
                    let b = b.value();
                    if b.shape() != [geom.out_channels] {
                        return Err(Error::shape("conv2d", &[sx, sw, b.shape()]));
                    }
                    Some(b.data().to_vec())
                }
                None => None,
            };
            let cols = im2col(&geom, x.data());
            let ncols = geom.col_cols();
            let mut prod = vec![0.0; geom.out_channels * ncols];
            gemm(
                geom.out_channels,
                geom.col_rows(),
                ncols,
                w.data(),
                false,
                &cols,
                false,
                0.0,
                &mut prod,
            );
            let area = geom.out_height * geom.out_width;
            let mut out = vec![0.0; prod.len()];
            for n in 0..geom.batch {
                for o in 0..geom.out_channels {
                    let b = bias_val.as_ref().map_or(0.0, |b| b[o]);
                    let src = &prod[o * ncols + n * area..o * ncols + (n + 1) * area];
                    let dst = &mut out[(n * geom.out_channels + o) * area..][..area];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + b;
                    }
                }
            }
            let shape = vec![geom.batch, geom.out_channels, geom.out_height, geom.out_width];
            (Tensor::new(shape, out)?, geom, cols)
        };
        let cols = if keep_cols { cols } else { Vec::new() };
        Ok(self.tape.push(out, Op::Conv2d { geom, cols }, &inputs))
    }

    /// Elementwise sum of equal shapes, or a `[m, n] + [n]` row broadcast.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        let (out, op) = {
            let a = self.value();
            let b = rhs.value();
            if a.shape() == b.shape() {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                (Tensor::new(a.shape().to_vec(), data)?, Op::Add)
            } else if a.shape().len() == 2 && b.shape() == [a.shape()[1]] {
                let cols = a.shape()[1];
                let data = a
                    .data()
                    .chunks(cols)
                    .flat_map(|row| row.iter().zip(b.data()).map(|(x, y)| x + y))
                    .collect();
                (Tensor::new(a.shape().to_vec(), data)?, Op::AddRowBias { cols })
            } else {
                return Err(Error::shape("add", &[a.shape(), b.shape()]));
            }
        };
        Ok(self.tape.push(out, op, &[self.id, rhs.id]))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let out = self.map(|x| x * factor);
        self.tape.push(out, Op::Scale(factor), &[self.id])
    }

    pub fn tanh(self) -> Var<'t> {
        let out = self.map(f64::tanh);
        self.tape.push(out, Op::Tanh, &[self.id])
    }

    pub fn relu(self) -> Var<'t> {
        let out = self.map(|x| x.max(0.0));
        self.tape.push(out, Op::Relu, &[self.id])
    }

    pub fn abs(self) -> Var<'t> {
        let out = self.map(f64::abs);
        self.tape.push(out, Op::Abs, &[self.id])
    }

    /// Projects a vector, or every row of a matrix, onto the unit sphere.
    pub fn l2_normalize(self) -> Result<Var<'t>> {
        let (out, cols, norms) = {
            let x = self.value();
            let cols = match x.shape() {
                [n] => *n,
                [_, n] => *n,
                s => return Err(Error::shape("l2_normalize", &[s])),
            };
            let mut data = x.data().to_vec();
            let mut norms = Vec::with_capacity(data.len() / cols);
            for (row, chunk) in data.chunks_mut(cols).enumerate() {
                let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm >= EPSILON_NORM) {
                    return Err(Error::DegenerateNorm {
                        row,
                        norm,
                        eps: EPSILON_NORM,
                    });
                }
                chunk.iter_mut().for_each(|v| *v /= norm);
                norms.push(norm);
            }
            (Tensor::new(x.shape().to_vec(), data)?, cols, norms)
        };
        Ok(self
            .tape
            .push(out, Op::L2Normalize { cols, norms }, &[self.id]))
    }

    /// Sum of the elementwise product of two equally shaped tensors.
    pub fn dot(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        let out = {
            let a = self.value();
            let b = rhs.value();
            if a.shape() != b.shape() {
                return Err(Error::shape("dot", &[a.shape(), b.shape()]));
            }
            Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
        };
        Ok(self.tape.push(out, Op::Dot, &[self.id, rhs.id]))
    }

    /// Mean of all elements.
    pub fn mean(self) -> Var<'t> {
        let out = {
            let a = self.value();
            Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        };
        self.tape.push(out, Op::Mean, &[self.id])
    }

    /// Mean softmax cross-entropy of `[m, classes]` logits against integer labels.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let (out, classes, probs) = {
            let z = self.value();
            let s = z.shape();
            if s.len() != 2 || s[0] != labels.len() {
                return Err(Error::shape("softmax_cross_entropy", &[s, &[labels.len()]]));
            }
            let classes = s[1];
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::InvalidArgument(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
            let mut probs = z.data().to_vec();
            let mut loss = 0.0;
            for (row, &label) in probs.chunks_mut(classes).zip(labels) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let shifted = row[label] - max;
                let mut total = 0.0;
                for p in row.iter_mut() {
                    *p = (*p - max).exp();
                    total += *p;
                }
                row.iter_mut().for_each(|p| *p /= total);
                loss -= shifted - total.ln();
            }
            (Tensor::scalar(loss / labels.len() as f64), classes, probs)
        };
        Ok(self.tape.push(
            out,
            Op::SoftmaxCrossEntropy {
                classes,
                probs,
                labels: labels.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Global average pooling `N×C×H×W → N×C`.
    pub fn avg_pool(self) -> Result<Var<'t>> {
        let (out, channels, area) = {
            let x = self.value();
            let s = x.shape();
            if s.len() != 4 {
                return Err(Error::shape("avg_pool", &[s]));
            }
            let area = s[2] * s[3];
            let data = x
                .data()
                .chunks(area)
                .map(|c| c.iter().sum::<f64>() / area as f64)
                .collect();
            (Tensor::new(vec![s[0], s[1]], data)?, s[1], area)
        };
        Ok(self
            .tape
            .push(out, Op::AvgPool { channels, area }, &[self.id]))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value();
        let data = x.data().iter().map(|&v| f(v)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    /// Propagates `∂self/∂leaf` into every differentiable leaf reachable from
    /// `self`. Leaf gradients accumulate across calls until `Tape::zero_grad`.
    pub fn backward(self) -> Result<()> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=self.id).map(|_| None).collect();
        grads[self.id] = Some(vec![1.0]);

        for id in (0..=self.id).rev() {
            let Some(record) = &nodes[id].record else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let want = |i: usize| nodes[record.inputs[i]].requires_grad;
            let input = |i: usize| &nodes[record.inputs[i]].value;
            let out = &nodes[id].value;
            let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
                let slot = record.inputs[i];
                let buf = grads[slot].get_or_insert_with(|| vec![0.0; nodes[slot].value.len()]);
                f(buf);
            };
            match &record.op {
                Op::MatMul { m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    if want(0) {
                        let b = input(1).data();
                        acc(0, &mut |ga| gemm(m, n, k, &g, false, b, true, 1.0, ga));
                    }
                    if want(1) {
                        let a = input(0).data();
                        acc(1, &mut |gb| gemm(k, m, n, a, true, &g, false, 1.0, gb));
                    }
                }
                Op::Transpose { rows, cols } => {
                    let t = transpose(*cols, *rows, &g);
                    acc(0, &mut |ga| add_into(ga, &t));
                }
                Op::Conv2d { geom, cols } => {
                    let has_bias = record.inputs.len() == 3;
                    let w = input(1).data();
                    conv_backward(geom, cols, &g, w, has_bias, &want, &mut acc);
                }
                Op::Add => {
                    for i in 0..2 {
                        if want(i) {
                            acc(i, &mut |ga| add_into(ga, &g));
                        }
                    }
                }
                Op::AddRowBias { cols } => {
                    if want(0) {
                        acc(0, &mut |ga| add_into(ga, &g));
                    }
                    if want(1) {
                        acc(1, &mut |gb| {
                            for row in g.chunks(*cols) {
                                add_into(gb, row);
                            }
                        });
                    }
                }
                Op::Scale(f) => acc(0, &mut |ga| {
                    ga.iter_mut().zip(&g).for_each(|(a, gi)| *a += f * gi)
                }),
                Op::Tanh => acc(0, &mut |ga| {
                    for ((a, gi), y) in ga.iter_mut().zip(&g).zip(out.data()) {
                        *a += gi * (1.0 - y * y);
                    }
                }),
                Op::Relu => acc(0, &mut |ga| {
                    for ((a, gi), y) in ga.iter_mut().zip(&g).zip(out.data()) {
                        if *y > 0.0 {
                            *a += gi;
                        }
                    }
                }),
                Op::Abs => acc(0, &mut |ga| {
                    for ((a, gi), x) in ga.iter_mut().zip(&g).zip(input(0).data()) {
                        // subgradient 0 at the kink
                        if *x > 0.0 {
                            *a += gi;
                        } else if *x < 0.0 {
                            *a -= gi;
                        }
                    }
                }),
                Op::L2Normalize { cols, norms } => acc(0, &mut |ga| {
                    let rows = ga.chunks_mut(*cols).zip(g.chunks(*cols));
                    for (((ga, gr), y), norm) in rows.zip(out.data().chunks(*cols)).zip(norms) {
                        let proj: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((a, gi), yi) in ga.iter_mut().zip(gr).zip(y) {
                            *a += (gi - yi * proj) / norm;
                        }
                    }
                }),
                Op::Dot => {
                    let s = g[0];
                    for i in 0..2 {
                        if want(i) {
                            let other = input(1 - i).data();
                            acc(i, &mut |ga| {
                                ga.iter_mut().zip(other).for_each(|(a, o)| *a += s * o)
                            });
                        }
                    }
                }
                Op::Mean => {
                    let s = g[0] / input(0).len() as f64;
                    acc(0, &mut |ga| ga.iter_mut().for_each(|a| *a += s));
                }
                Op::SoftmaxCrossEntropy {
                    classes,
                    probs,
                    labels,
                } => {
                    let s = g[0] / labels.len() as f64;
                    acc(0, &mut |ga| {
                        for (r, (row, p)) in
                            ga.chunks_mut(*classes).zip(probs.chunks(*classes)).enumerate()
                        {
                            for (j, (a, pj)) in row.iter_mut().zip(p).enumerate() {
                                let onehot = if j == labels[r] { 1.0 } else { 0.0 };
                                *a += s * (pj - onehot);
                            }
                        }
                    });
                }
                Op::AvgPool { channels: _, area } => {
                    let inv = 1.0 / *area as f64;
                    acc(0, &mut |ga| {
                        for (chunk, gi) in ga.chunks_mut(*area).zip(&g) {
                            chunk.iter_mut().for_each(|a| *a += gi * inv);
                        }
                    });
                }
            }
        }
        drop(nodes);

        let mut nodes = self.tape.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(grads) {
            if node.record.is_none() && node.requires_grad {
                if let Some(g) = g {
                    match &mut node.grad {
                        Some(existing) => add_into(existing, &g),
                        None => node.grad = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}

/// Unfolds input patches into a `(C·K·K) × (N·OH·OW)` matrix.
fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let ncols = g.col_cols();
    let area = g.out_height * g.out_width;
    let mut cols = vec![0.0; g.col_rows() * ncols];
    for c in 0..g.in_channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = ((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for n in 0..g.batch {
                    let plane = &x[(n * g.in_channels + c) * g.height * g.width..];
                    let dst = &mut cols[row + n * area..row + (n + 1) * area];
                    for oy in 0..g.out_height {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                        for ox in 0..g.out_width {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.width as isize {
                                dst[oy * g.out_width + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let ncols = g.col_cols();
    let area = g.out_height * g.out_width;
    for c in 0..g.in_channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = ((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for n in 0..g.batch {
                    let plane = &mut dx[(n * g.in_channels + c) * g.height * g.width..];
                    let src = &cols[row + n * area..row + (n + 1) * area];
                    for oy in 0..g.out_height {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                        for ox in 0..g.out_width {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.width as isize {
                                dst[ix as usize] += src[oy * g.out_width + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward(
    geom: &ConvGeom,
    cols: &[f64],
    g: &[f64],
    w: &[f64],
    has_bias: bool,
    want: &dyn Fn(usize) -> bool,
    acc: &mut dyn FnMut(usize, &mut dyn FnMut(&mut [f64])),
) {
    let ncols = geom.col_cols();
    let area = geom.out_height * geom.out_width;
    let o_ch = geom.out_channels;
    // gradient laid out as [O, N·OH·OW] to match the forward GEMM
    let mut gmat = vec![0.0; o_ch * ncols];
    for n in 0..geom.batch {
        for o in 0..o_ch {
            let src = &g[(n * o_ch + o) * area..][..area];
            gmat[o * ncols + n * area..o * ncols + (n + 1) * area].copy_from_slice(src);
        }
    }
    if want(1) {
        acc(1, &mut |gw| {
            gemm(o_ch, ncols, geom.col_rows(), &gmat, false, cols, true, 1.0, gw)
        });
    }
    if has_bias && want(2) {
        acc(2, &mut |gb| {
            for (o, b) in gb.iter_mut().enumerate() {
                *b += gmat[o * ncols..(o + 1) * ncols].iter().sum::<f64>();
            }
        });
    }
    if want(0) {
        let mut dcols = vec![0.0; geom.col_rows() * ncols];
        gemm(geom.col_rows(), o_ch, ncols, w, true, &gmat, false, 0.0, &mut dcols);
        acc(0, &mut |gx| col2im(geom, &dcols, gx));
    }
}
