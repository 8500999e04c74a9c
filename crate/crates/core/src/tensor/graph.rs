//! Reverse-mode differentiation over the fixed operation set the model uses.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node holding
//! its forward value and the handles of its inputs. [`Graph::backward`]
//! walks the tape in reverse and leaves gradients on every node that
//! (transitively) depends on a leaf created with `requires_grad`.

use super::kernels::{self, ConvGeom, UpGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    TransposeConv2d { input: Var, weight: Var, bias: Var, geom: UpGeom },
    AvgPool2 { input: Var },
    Concat { a: Var, b: Var },
    SliceChannels { input: Var, start: usize },
    Crop { input: Var },
    Relu { input: Var },
    Mse { pred: Var, target: Var },
    WeightedSum { input: Var, coeffs: Vec<f64> },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    scratch: Vec<S>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), scratch: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input. Its `requires_grad` flag decides whether a gradient is
    /// collected for it.
    pub fn leaf(&mut self, mut value: Tensor<S>) -> Var {
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves the gradient of `v` out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<S>> {
        self.nodes[v.0].value.grad.take()
    }

    fn push(&mut self, value: Tensor<S>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor<S>, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs = self.inputs_of(&op).iter().any(|&i| self.nodes[i.0].value.requires_grad);
        Ok(self.push(value.with_requires_grad(needs), op))
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } | Op::TransposeConv2d { input, weight, bias, .. } => {
                vec![input, weight, bias]
            }
            Op::AvgPool2 { input }
            | Op::SliceChannels { input, .. }
            | Op::Crop { input }
            | Op::Relu { input }
            | Op::WeightedSum { input, .. } => vec![input],
            Op::Concat { a, b } => vec![a, b],
            Op::Mse { pred, target } => vec![pred, target],
        }
    }

    /// Cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, k, k]` (k odd) plus bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize, stride: usize) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4("conv2d")?;
        let (cout, wcin, kh, kw) = self.value(weight).dims4("conv2d")?;
        if wcin != cin {
            return Err(Error::shape("conv2d", format!("input has {} channels, weight expects {}", cin, wcin)));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {}x{} must be square and odd", kh, kw)));
        }
        if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape("conv2d", format!("kernel {} does not fit {}x{} with padding {}", kh, h, w, padding)));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", self.value(bias).shape(), cout)));
        }
        let geom = ConvGeom { n, cin, h, w, cout, k: kh, pad: padding, stride };
        let mut scratch = std::mem::take(&mut self.scratch);
        let data = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &mut scratch,
        );
        self.scratch = scratch;
        let out = Tensor::new(vec![n, cout, geom.out_h(), geom.out_w()], data)?;
        self.push_checked("conv2d", out, Op::Conv2d { input, weight, bias, geom })
    }

    /// 2x2 stride-2 transpose convolution; weight is `[Cin, Cout, 2, 2]`.
    pub fn transpose_conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4("transpose_conv2d")?;
        let (wcin, cout, kh, kw) = self.value(weight).dims4("transpose_conv2d")?;
        if wcin != cin {
            return Err(Error::shape("transpose_conv2d", format!("input has {} channels, weight expects {}", cin, wcin)));
        }
        if (kh, kw) != (2, 2) {
            return Err(Error::shape("transpose_conv2d", format!("kernel must be 2x2, got {}x{}", kh, kw)));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape("transpose_conv2d", format!("bias {:?} for {} outputs", self.value(bias).shape(), cout)));
        }
        let geom = UpGeom { n, cin, h, w, cout };
        let data = kernels::transpose_conv2d_forward(&geom, self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let out = Tensor::new(vec![n, cout, 2 * h, 2 * w], data)?;
        self.push_checked("transpose_conv2d", out, Op::TransposeConv2d { input, weight, bias, geom })
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::OddExtent { h, w });
        }
        let data = kernels::avg_pool2_forward(n * c, h, w, self.value(input).data());
        let out = Tensor::new(vec![n, c, h / 2, w / 2], data)?;
        self.push_checked("avg_pool2", out, Op::AvgPool2 { input })
    }

    /// Channels of `a` followed by channels of `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4("concat_channels")?;
        let (nb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let plane = h * w;
        let data = kernels::concat_forward(n, ca * plane, cb * plane, self.value(a).data(), self.value(b).data());
        let out = Tensor::new(vec![n, ca + cb, h, w], data)?;
        self.push_checked("concat_channels", out, Op::Concat { a, b })
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).slice_channels(start, len)?;
        self.push_checked("slice_channels", out, Op::SliceChannels { input, start })
    }

    /// Keeps the top-left `h x w` window of every plane.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c, ih, iw) = self.value(input).dims4("crop")?;
        if h > ih || w > iw {
            return Err(Error::shape("crop", format!("{}x{} window exceeds {}x{}", h, w, ih, iw)));
        }
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in 0..h {
                let row = (p * ih + y) * iw;
                data.extend_from_slice(&src[row..row + w]);
            }
        }
        let out = Tensor::new(vec![n, c, h, w], data)?;
        self.push_checked("crop", out, Op::Crop { input })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(S::zero())).collect())?;
        self.push_checked("relu", out, Op::Relu { input })
    }

    /// Mean of squared differences over every element.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        if p.is_empty() {
            return Err(Error::EmptyInput("mse_loss"));
        }
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| {
                let d = (a - b).to_f64_lossless();
                d * d
            })
            .sum();
        let out = Tensor::scalar(S::from_f64_lossy(sum / p.len() as f64));
        self.push_checked("mse_loss", out, Op::Mse { pred, target })
    }

    /// `sum_i coeffs[i] * x[i]`; a plain sum when every coefficient is 1.
    pub fn weighted_sum(&mut self, input: Var, coeffs: Vec<f64>) -> Result<Var> {
        let x = self.value(input);
        if coeffs.len() != x.len() {
            return Err(Error::shape("weighted_sum", format!("{} coefficients for {} elements", coeffs.len(), x.len())));
        }
        let total: f64 = x.data().iter().zip(&coeffs).map(|(&v, &c)| v.to_f64_lossless() * c).sum();
        let out = Tensor::scalar(S::from_f64_lossy(total));
        self.push_checked("weighted_sum", out, Op::WeightedSum { input, coeffs })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.weighted_sum(input, vec![1.0; n])
    }

    /// Back-propagates from a scalar node. Gradients from earlier calls are
    /// discarded.
    /// Input channels of `v` whose gradient anyone consumes; a concat with
    /// one constant side only needs the other side's channels.
    fn grad_channels(&self, v: Var) -> Option<std::ops::Range<usize>> {
        let node = &self.nodes[v.0].value;
        if !node.requires_grad {
            return None;
        }
        let c = node.shape()[1];
        match self.nodes[v.0].op {
            Op::Concat { a, b } => {
                let ca = self.value(a).shape()[1];
                match (self.value(a).requires_grad, self.value(b).requires_grad) {
                    (true, false) => Some(0..ca),
                    (false, true) => Some(ca..c),
                    _ => Some(0..c),
                }
            }
            _ => Some(0..c),
        }
    }

    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, got {:?}", self.value(root).shape())));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        if !self.value(root).requires_grad() {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let op = self.nodes[idx].op.clone();
            let needs = |v: Var| self.nodes[v.0].value.requires_grad;
            let mut contribs: Vec<(Var, Vec<S>)> = Vec::new();
            match op {
                Op::Leaf => {}
                Op::Conv2d { input, weight, bias, geom } => {
                    let need_params = needs(weight) || needs(bias);
                    let mut scratch = std::mem::take(&mut self.scratch);
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &geom,
                        self.value(input).data(),
                        self.value(weight).data(),
                        &g,
                        self.grad_channels(input),
                        need_params,
                        &mut scratch,
                    );
                    self.scratch = scratch;
                    if let Some(dx) = dx {
                        contribs.push((input, dx));
                    }
                    if need_params {
                        contribs.push((weight, dw));
                        contribs.push((bias, db));
                    }
                }
                Op::TransposeConv2d { input, weight, bias, geom } => {
                    let need_params = needs(weight) || needs(bias);
                    let (dx, dw, db) = kernels::transpose_conv2d_backward(
                        &geom,
                        self.value(input).data(),
                        self.value(weight).data(),
                        &g,
                        needs(input),
                        need_params,
                    );
                    if let Some(dx) = dx {
                        contribs.push((input, dx));
                    }
                    if need_params {
                        contribs.push((weight, dw));
                        contribs.push((bias, db));
                    }
                }
                Op::AvgPool2 { input } => {
                    let (n, c, h, w) = self.value(input).dims4("avg_pool2")?;
                    contribs.push((input, kernels::avg_pool2_backward(n * c, h, w, &g)));
                }
                Op::Concat { a, b } => {
                    let (n, ca, h, w) = self.value(a).dims4("concat_channels")?;
                    let cb = self.value(b).shape()[1];
                    let (da, db) = kernels::concat_backward(n, ca * h * w, cb * h * w, &g);
                    if needs(a) {
                        contribs.push((a, da));
                    }
                    if needs(b) {
                        contribs.push((b, db));
                    }
                }
                Op::SliceChannels { input, start } => {
                    let (n, c, h, w) = self.value(input).dims4("slice_channels")?;
                    let len = self.nodes[idx].value.shape()[1];
                    let plane = h * w;
                    let mut dx = vec![S::zero(); n * c * plane];
                    for s in 0..n {
                        let dst = (s * c + start) * plane;
                        dx[dst..dst + len * plane].copy_from_slice(&g[s * len * plane..(s + 1) * len * plane]);
                    }
                    contribs.push((input, dx));
                }
                Op::Crop { input } => {
                    let (n, c, ih, iw) = self.value(input).dims4("crop")?;
                    let (h, w) = (self.nodes[idx].value.shape()[2], self.nodes[idx].value.shape()[3]);
                    let mut dx = vec![S::zero(); n * c * ih * iw];
                    for p in 0..n * c {
                        for y in 0..h {
                            let dst = (p * ih + y) * iw;
                            dx[dst..dst + w].copy_from_slice(&g[(p * h + y) * w..(p * h + y + 1) * w]);
                        }
                    }
                    contribs.push((input, dx));
                }
                Op::Relu { input } => {
                    let x = self.value(input).data();
                    let dx = x.iter().zip(&g).map(|(&v, &d)| if v > S::zero() { d } else { S::zero() }).collect();
                    contribs.push((input, dx));
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(pred).data(), self.value(target).data());
                    let scale = g[0] * S::from_f64_lossy(2.0 / p.len() as f64);
                    let dp: Vec<S> = p.iter().zip(t).map(|(&a, &b)| (a - b) * scale).collect();
                    if needs(target) {
                        contribs.push((target, dp.iter().map(|&v| -v).collect()));
                    }
                    contribs.push((pred, dp));
                }
                Op::WeightedSum { input, ref coeffs } => {
                    let dx = coeffs.iter().map(|&c| g[0] * S::from_f64_lossy(c)).collect();
                    contribs.push((input, dx));
                }
            }
            for (v, d) in contribs {
                if !needs(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(d),
                }
            }
            if self.nodes[idx].value.requires_grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                self.nodes[idx].value.grad = Some(g);
            }
        }
        Ok(())
    }
}
