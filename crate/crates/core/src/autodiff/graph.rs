use alloc::vec;
use alloc::vec::Vec;

use super::conv::{self, ConvGeom, Padding};
use super::norm::{self, BnStats};
use crate::sampler::{self, Kernel, SamplingWeights};
use crate::{Error, Real, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial axis of an `[N, H, W]` saliency map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Row sums, `[N, H]`.
    Y,
    /// Column sums, `[N, W]`.
    X,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, training: bool },
    AvgPool2(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Marginal { s: Var, axis: Axis },
    Weights { sy: Var, sx: Var, weights: Vec<SamplingWeights<T>> },
    Sample { x: Var, weights: Var, kernel: Kernel },
    InverseSample { y: Var, weights: Var, kernel: Kernel },
    Resize { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    released: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            released: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_released(&self) -> bool {
        self.released
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last backward pass. `None` for nodes
    /// that do not require gradients or were not reached.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("gradient has node shape"))
    }

    /// Cached sampling weights of a node created by [`Graph::sampling_weights`].
    pub fn weights_of(&self, v: Var) -> Option<&[SamplingWeights<T>]> {
        match &self.nodes[v.0].op {
            Op::Weights { weights, .. } => Some(weights),
            _ => None,
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        finite(op_name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn live(&self) -> Result<()> {
        if self.released {
            Err(Error::Released)
        } else {
            Ok(())
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                alloc::format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push("add", value, &[a, b], Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push("mul", value, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.live()?;
        let value = self.value(a).map(|v| v * c);
        self.push("scale", value, &[a], Op::Scale(a, c))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, &[a], Op::Sum(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", value, &[a], Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let value = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push("sigmoid", value, &[a], Op::Sigmoid(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.live()?;
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, &[a], Op::Reshape(a))
    }

    /// `x: [N,H,W,C_in]`, `w: [kh,kw,C_in,C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        self.live()?;
        let dims = self.value(x).dims4("conv2d")?;
        let (kh, kw, ci, co) = self.value(w).dims4("conv2d weight")?;
        if ci != dims.3 {
            return Err(Error::shape(
                "conv2d",
                alloc::format!("input has {} channels, kernel expects {ci}", dims.3),
            ));
        }
        let geom = ConvGeom::new(dims, (kh, kw), stride, padding, "conv2d")?;
        let out = conv::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), co);
        let value = Tensor::new(&[dims.0, geom.out_h, geom.out_w, co], out)?;
        self.push("conv2d", value, &[x, w], Op::Conv2d { x, w, geom })
    }

    /// Depthwise convolution, `w: [kh, kw, C]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        self.live()?;
        let dims = self.value(x).dims4("depthwise_conv2d")?;
        let (kh, kw, c) = match self.shape(w) {
            &[kh, kw, c] => (kh, kw, c),
            s => return Err(Error::shape("depthwise_conv2d", alloc::format!("kernel must be [kh,kw,C], got {s:?}"))),
        };
        if c != dims.3 {
            return Err(Error::shape("depthwise_conv2d", alloc::format!("{} channels vs kernel {c}", dims.3)));
        }
        let geom = ConvGeom::new(dims, (kh, kw), stride, padding, "depthwise_conv2d")?;
        let out = conv::depthwise_forward(&geom, self.value(x).data(), self.value(w).data());
        let value = Tensor::new(&[dims.0, geom.out_h, geom.out_w, c], out)?;
        self.push("depthwise_conv2d", value, &[x, w], Op::Depthwise { x, w, geom })
    }

    /// Batch normalization over the last axis.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, stats: &mut BnStats<T>, training: bool) -> Result<Var> {
        self.live()?;
        let shape = self.shape(x).to_vec();
        let c = *shape.last().expect("tensors have rank >= 1");
        if self.value(x).len() / c == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.channels() != c {
            return Err(Error::shape(
                "batchnorm",
                alloc::format!(
                    "{c} channels vs gamma {:?}, beta {:?}, stats {}",
                    self.shape(gamma),
                    self.shape(beta),
                    stats.channels()
                ),
            ));
        }
        let f = norm::bn_forward(
            self.value(x).data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            training,
        );
        let value = Tensor::new(&shape, f.out)?;
        self.push(
            "batchnorm",
            value,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: f.xhat,
                inv_std: f.inv_std,
                training,
            },
        )
    }

    /// 2x2 average pooling with stride 2; odd edges average the valid taps.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let (n, h, w, c) = self.value(x).dims4("avg_pool2")?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * oh * ow * c];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let ys = 2 * oy..(2 * oy + 2).min(h);
                    let xs = 2 * ox..(2 * ox + 2).min(w);
                    let count = T::from_usize(ys.len() * xs.len());
                    let o = &mut out[((b * oh + oy) * ow + ox) * c..][..c];
                    for iy in ys {
                        for ix in xs.clone() {
                            add_into(o, &src[((b * h + iy) * w + ix) * c..][..c]);
                        }
                    }
                    o.iter_mut().for_each(|v| *v = *v / count);
                }
            }
        }
        let value = Tensor::new(&[n, oh, ow, c], out)?;
        self.push("avg_pool2", value, &[x], Op::AvgPool2(x))
    }

    /// 3x3 max pooling, stride 2, same padding.
    pub fn max_pool3(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let dims = self.value(x).dims4("max_pool3")?;
        let (n, h, w, c) = dims;
        let geom = ConvGeom::new(dims, (3, 3), 2, Padding::Same, "max_pool3")?;
        let (oh, ow) = (geom.out_h, geom.out_w);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * oh * ow * c];
        let mut argmax = vec![0usize; out.len()];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for k in 0..c {
                        let mut best = T::neg_infinity();
                        let mut at = 0;
                        for ky in 0..3 {
                            let Some(iy) = (oy * 2 + ky).checked_sub(geom.pad_top).filter(|&p| p < h) else {
                                continue;
                            };
                            for kx in 0..3 {
                                let Some(ix) = (ox * 2 + kx).checked_sub(geom.pad_left).filter(|&p| p < w) else {
                                    continue;
                                };
                                let idx = ((b * h + iy) * w + ix) * c + k;
                                if src[idx] > best {
                                    best = src[idx];
                                    at = idx;
                                }
                            }
                        }
                        let o = ((b * oh + oy) * ow + ox) * c + k;
                        out[o] = best;
                        argmax[o] = at;
                    }
                }
            }
        }
        let value = Tensor::new(&[n, oh, ow, c], out)?;
        self.push("max_pool3", value, &[x], Op::MaxPool { x, argmax })
    }

    /// `[N,H,W,C] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let (n, h, w, c) = self.value(x).dims4("global_avg_pool")?;
        let inv = T::one() / T::from_usize(h * w);
        let mut out = vec![T::zero(); n * c];
        for (b, img) in self.value(x).data().chunks_exact(h * w * c).enumerate() {
            let o = &mut out[b * c..(b + 1) * c];
            for px in img.chunks_exact(c) {
                add_into(o, px);
            }
            o.iter_mut().for_each(|v| *v = *v * inv);
        }
        let value = Tensor::new(&[n, c], out)?;
        self.push("global_avg_pool", value, &[x], Op::GlobalAvgPool(x))
    }

    /// `x: [N,F]`, `w: [F,O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.live()?;
        let (n, f) = match self.shape(x) {
            &[n, f] => (n, f),
            s => return Err(Error::shape("linear", alloc::format!("input must be [N,F], got {s:?}"))),
        };
        let o = match self.shape(w) {
            &[wf, o] if wf == f => o,
            s => return Err(Error::shape("linear", alloc::format!("weight {s:?} vs {f} features"))),
        };
        if self.shape(b) != [o] {
            return Err(Error::shape("linear", alloc::format!("bias {:?} vs {o} outputs", self.shape(b))));
        }
        let mut out = vec![T::zero(); n * o];
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        crate::real::matmul(n, f, o, self.value(x).data(), self.value(w).data(), &mut out, true);
        let value = Tensor::new(&[n, o], out)?;
        self.push("linear", value, &[x, w, b], Op::Linear { x, w, b })
    }

    /// Mean softmax cross-entropy over the batch, shape `[1]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.live()?;
        let (n, k) = match self.shape(logits) {
            &[n, k] => (n, k),
            s => return Err(Error::shape("softmax_cross_entropy", alloc::format!("logits must be [N,K], got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                alloc::format!("{} labels for batch of {n}", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let mut probs = vec![T::zero(); n * k];
        let mut loss = 0.0f64;
        for ((row, p), &label) in self.value(logits).data().chunks_exact(k).zip(probs.chunks_exact_mut(k)).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - max).exp();
                z = z + *pi;
            }
            p.iter_mut().for_each(|v| *v = *v / z);
            loss += (z.ln() - (row[label] - max)).as_f64();
        }
        let value = Tensor::scalar(T::from_f64(loss / n as f64));
        self.push(
            "softmax_cross_entropy",
            value,
            &[logits],
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Normalized marginal of a saliency map `s: [N, H, W]`.
    pub fn marginal(&mut self, s: Var, axis: Axis) -> Result<Var> {
        self.live()?;
        let (n, h, w) = match self.shape(s) {
            &[n, h, w] => (n, h, w),
            sh => return Err(Error::shape("marginal", alloc::format!("saliency must be [N,H,W], got {sh:?}"))),
        };
        let len = if axis == Axis::Y { h } else { w };
        let mut out = Vec::with_capacity(n * len);
        for map in self.value(s).data().chunks_exact(h * w) {
            let (sy, sx) = sampler::marginalize_raw(h, w, map)?;
            out.extend(if axis == Axis::Y { sy } else { sx });
        }
        let value = Tensor::new(&[n, len], out)?;
        self.push("marginal", value, &[s], Op::Marginal { s, axis })
    }

    /// Interval-overlap weights for each batch element from marginals
    /// `sy: [N, H]`, `sx: [N, W]`. The node's value is the dense
    /// `[N, H_r*H + W_r*W]` concatenation of `Gy` and `Gx`.
    pub fn sampling_weights(&mut self, sy: Var, sx: Var, h_r: usize, w_r: usize) -> Result<Var> {
        self.live()?;
        let (n, h, w) = match (self.shape(sy), self.shape(sx)) {
            (&[n, h], &[n2, w]) if n == n2 => (n, h, w),
            (a, b) => return Err(Error::shape("sampling_weights", alloc::format!("marginals {a:?} and {b:?}"))),
        };
        if h_r == 0 || w_r == 0 || h_r > h || w_r > w {
            return Err(Error::shape(
                "sampling_weights",
                alloc::format!("sampling size {h_r}x{w_r} must be within 1x1..={h}x{w}"),
            ));
        }
        let mut weights = Vec::with_capacity(n);
        let mut flat = Vec::with_capacity(n * (h_r * h + w_r * w));
        for (my, mx) in self.value(sy).data().chunks_exact(h).zip(self.value(sx).data().chunks_exact(w)) {
            let ws = SamplingWeights::from_marginals(my, mx, h_r, w_r)?;
            flat.extend_from_slice(ws.gy.dense());
            flat.extend_from_slice(ws.gx.dense());
            weights.push(ws);
        }
        let value = Tensor::new(&[n, h_r * h + w_r * w], flat)?;
        self.push("sampling_weights", value, &[sy, sx], Op::Weights { sy, sx, weights })
    }

    /// Weights of constant saliency through the same construction.
    pub fn uniform_sampling_weights(&mut self, n: usize, h: usize, w: usize, h_r: usize, w_r: usize) -> Result<Var> {
        let my: Vec<T> = sampler::uniform_marginal(h);
        let mx: Vec<T> = sampler::uniform_marginal(w);
        let sy = self.constant(Tensor::new(&[n, h], my.repeat(n))?);
        let sx = self.constant(Tensor::new(&[n, w], mx.repeat(n))?);
        self.sampling_weights(sy, sx, h_r, w_r)
    }

    fn weights_for(&self, op: &'static str, weights: Var, n: usize) -> Result<&[SamplingWeights<T>]> {
        let ws = self
            .weights_of(weights)
            .ok_or_else(|| Error::Invalid(alloc::format!("{op}: node is not a sampling-weights node")))?;
        if ws.len() != n {
            return Err(Error::shape(op, alloc::format!("batch {n} vs {} weight sets", ws.len())));
        }
        Ok(ws)
    }

    /// `[N, H, W, D] -> [N, H_r, W_r, D]`.
    pub fn sample(&mut self, x: Var, weights: Var, kernel: Kernel) -> Result<Var> {
        self.live()?;
        let (n, h, w, d) = self.value(x).dims4("sample")?;
        let ws = self.weights_for("sample", weights, n)?;
        let (h_r, w_r) = (ws[0].h_r(), ws[0].w_r());
        if (ws[0].h_in(), ws[0].w_in()) != (h, w) {
            return Err(Error::shape(
                "sample",
                alloc::format!("input {h}x{w} vs weights for {}x{}", ws[0].h_in(), ws[0].w_in()),
            ));
        }
        let mut out = vec![T::zero(); n * h_r * w_r * d];
        let xd = self.value(x).data();
        for (b, (o, wb)) in out.chunks_exact_mut(h_r * w_r * d).zip(ws).enumerate() {
            sampler::down_raw(wb, kernel, &xd[b * h * w * d..(b + 1) * h * w * d], d, sampler::sample_scale(wb), o);
        }
        let value = Tensor::new(&[n, h_r, w_r, d], out)?;
        self.push("sample", value, &[x, weights], Op::Sample { x, weights, kernel })
    }

    /// `[N, H_r, W_r, D] -> [N, H, W, D]` with the transposed weights.
    pub fn inverse_sample(&mut self, y: Var, weights: Var, kernel: Kernel) -> Result<Var> {
        self.live()?;
        let (n, h_r, w_r, d) = self.value(y).dims4("inverse_sample")?;
        let ws = self.weights_for("inverse_sample", weights, n)?;
        let (h, w) = (ws[0].h_in(), ws[0].w_in());
        if (ws[0].h_r(), ws[0].w_r()) != (h_r, w_r) {
            return Err(Error::shape(
                "inverse_sample",
                alloc::format!("input {h_r}x{w_r} vs weights for {}x{}", ws[0].h_r(), ws[0].w_r()),
            ));
        }
        let mut out = vec![T::zero(); n * h * w * d];
        let yd = self.value(y).data();
        for (b, (o, wb)) in out.chunks_exact_mut(h * w * d).zip(ws).enumerate() {
            sampler::up_raw(wb, kernel, &yd[b * h_r * w_r * d..(b + 1) * h_r * w_r * d], d, sampler::inverse_scale(wb), o);
        }
        let value = Tensor::new(&[n, h, w, d], out)?;
        self.push("inverse_sample", value, &[y, weights], Op::InverseSample { y, weights, kernel })
    }

    /// Bilinear resize of `[N, H, W, C]`.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.live()?;
        let value = sampler::bilinear_resize(self.value(x), out_h, out_w)?;
        if value.rank() != 4 {
            return Err(Error::shape("resize", "graph resize needs [N,H,W,C]"));
        }
        self.push("resize", value, &[x], Op::Resize { x })
    }

    /// Back-propagates from a scalar `loss`, then releases the graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.live()?;
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            self.release();
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let Some(grad) = node.grad.as_ref() else {
                continue;
            };
            backward_node(before, &node.op, &node.value, grad)?;
        }
        self.release();
        Ok(())
    }

    fn release(&mut self) {
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
                node.op = Op::Leaf;
            }
        }
        self.released = true;
    }
}

/// Adds `f`'s contribution to the gradient of `v` if it requires one.
fn acc<T: Real>(nodes: &mut [Node<T>], v: Var, f: impl FnOnce(&mut [T], &Tensor<T>)) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let len = node.value.len();
    let g = node.grad.get_or_insert_with(|| vec![T::zero(); len]);
    f(g, &node.value);
}

fn wants<T>(nodes: &[Node<T>], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn backward_node<T: Real>(nodes: &mut [Node<T>], op: &Op<T>, value: &Tensor<T>, grad: &[T]) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(nodes, *a, |g, _| add_into(g, grad));
            acc(nodes, *b, |g, _| add_into(g, grad));
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            acc(nodes, *a, |g, _| {
                for ((g, &d), &o) in g.iter_mut().zip(grad).zip(&bv) {
                    *g = *g + d * o;
                }
            });
            acc(nodes, *b, |g, _| {
                for ((g, &d), &o) in g.iter_mut().zip(grad).zip(&av) {
                    *g = *g + d * o;
                }
            });
        }
        Op::Scale(a, c) => acc(nodes, *a, |g, _| {
            for (g, &d) in g.iter_mut().zip(grad) {
                *g = *g + d * *c;
            }
        }),
        Op::Sum(a) => acc(nodes, *a, |g, _| g.iter_mut().for_each(|v| *v = *v + grad[0])),
        Op::Relu(a) => acc(nodes, *a, |g, x| {
            for ((g, &d), &xv) in g.iter_mut().zip(grad).zip(x.data()) {
                if xv > T::zero() {
                    *g = *g + d;
                }
            }
        }),
        Op::Sigmoid(a) => acc(nodes, *a, |g, _| {
            for ((g, &d), &y) in g.iter_mut().zip(grad).zip(value.data()) {
                *g = *g + d * y * (T::one() - y);
            }
        }),
        Op::Reshape(a) => acc(nodes, *a, |g, _| add_into(g, grad)),
        Op::Conv2d { x, w, geom } => {
            let co = *nodes[w.0].value.shape().last().unwrap();
            let want_dx = wants(nodes, *x);
            let (dx, dw) = conv::conv2d_backward(geom, nodes[x.0].value.data(), nodes[w.0].value.data(), co, grad, want_dx);
            if let Some(dx) = dx {
                acc(nodes, *x, |g, _| add_into(g, &dx));
            }
            acc(nodes, *w, |g, _| add_into(g, &dw));
        }
        Op::Depthwise { x, w, geom } => {
            let (dx, dw) = conv::depthwise_backward(geom, nodes[x.0].value.data(), nodes[w.0].value.data(), grad);
            acc(nodes, *x, |g, _| add_into(g, &dx));
            acc(nodes, *w, |g, _| add_into(g, &dw));
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            training,
        } => {
            let c = inv_std.len();
            let (dx, dg, db) = norm::bn_backward(grad, c, nodes[gamma.0].value.data(), xhat, inv_std, *training);
            acc(nodes, *x, |g, _| add_into(g, &dx));
            acc(nodes, *gamma, |g, _| add_into(g, &dg));
            acc(nodes, *beta, |g, _| add_into(g, &db));
        }
        Op::AvgPool2(x) => acc(nodes, *x, |g, xv| {
            let (n, h, w, c) = xv.dims4("avg_pool2").expect("rank checked in forward");
            let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
            for b in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let ys = 2 * oy..(2 * oy + 2).min(h);
                        let xs = 2 * ox..(2 * ox + 2).min(w);
                        let inv = T::one() / T::from_usize(ys.len() * xs.len());
                        let go = &grad[((b * oh + oy) * ow + ox) * c..][..c];
                        for iy in ys {
                            for ix in xs.clone() {
                                let dst = &mut g[((b * h + iy) * w + ix) * c..][..c];
                                for (d, &s) in dst.iter_mut().zip(go) {
                                    *d = *d + s * inv;
                                }
                            }
                        }
                    }
                }
            }
        }),
        Op::MaxPool { x, argmax } => acc(nodes, *x, |g, _| {
            for (&at, &d) in argmax.iter().zip(grad) {
                g[at] = g[at] + d;
            }
        }),
        Op::GlobalAvgPool(x) => acc(nodes, *x, |g, xv| {
            let (_, h, w, c) = xv.dims4("global_avg_pool").expect("rank checked in forward");
            let inv = T::one() / T::from_usize(h * w);
            for (b, img) in g.chunks_exact_mut(h * w * c).enumerate() {
                let go = &grad[b * c..(b + 1) * c];
                for px in img.chunks_exact_mut(c) {
                    for (d, &s) in px.iter_mut().zip(go) {
                        *d = *d + s * inv;
                    }
                }
            }
        }),
        Op::Linear { x, w, b } => {
            let (n, f) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
            let o = nodes[w.0].value.shape()[1];
            if wants(nodes, *x) {
                let mut dx = vec![T::zero(); n * f];
                crate::real::matmul_nt(n, o, f, grad, nodes[w.0].value.data(), &mut dx, false);
                acc(nodes, *x, |g, _| add_into(g, &dx));
            }
            if wants(nodes, *w) {
                let mut dw = vec![T::zero(); f * o];
                crate::real::matmul_tn(f, n, o, nodes[x.0].value.data(), grad, &mut dw, false);
                acc(nodes, *w, |g, _| add_into(g, &dw));
            }
            acc(nodes, *b, |g, _| {
                for row in grad.chunks_exact(o) {
                    add_into(g, row);
                }
            });
        }
        Op::SoftmaxCe { logits, labels, probs } => acc(nodes, *logits, |g, lv| {
            let k = lv.shape()[1];
            let scale = grad[0] / T::from_usize(labels.len());
            for (b, &label) in labels.iter().enumerate() {
                for j in 0..k {
                    let onehot = if j == label { T::one() } else { T::zero() };
                    g[b * k + j] = g[b * k + j] + scale * (probs[b * k + j] - onehot);
                }
            }
        }),
        Op::Marginal { s, axis } => {
            let &[_, h, w] = nodes[s.0].value.shape() else { unreachable!() };
            let len = if *axis == Axis::Y { h } else { w };
            let zeros_y = vec![T::zero(); h];
            let zeros_x = vec![T::zero(); w];
            acc(nodes, *s, |g, sv| {
                for (b, (map, out)) in sv.data().chunks_exact(h * w).zip(g.chunks_exact_mut(h * w)).enumerate() {
                    let m = &value.data()[b * len..(b + 1) * len];
                    let gm = &grad[b * len..(b + 1) * len];
                    if *axis == Axis::Y {
                        sampler::marginalize_backward_raw(h, w, map, m, &zeros_x, gm, &zeros_x, out);
                    } else {
                        sampler::marginalize_backward_raw(h, w, map, &zeros_y, m, &zeros_y, gm, out);
                    }
                }
            });
        }
        Op::Weights { sy, sx, weights } => {
            let (h, w) = (weights[0].h_in(), weights[0].w_in());
            let ylen = weights[0].h_r() * h;
            let per = ylen + weights[0].w_r() * w;
            acc(nodes, *sy, |g, _| {
                for (b, ws) in weights.iter().enumerate() {
                    add_into(&mut g[b * h..(b + 1) * h], &ws.gy.backward(&grad[b * per..b * per + ylen]));
                }
            });
            acc(nodes, *sx, |g, _| {
                for (b, ws) in weights.iter().enumerate() {
                    add_into(&mut g[b * w..(b + 1) * w], &ws.gx.backward(&grad[b * per + ylen..(b + 1) * per]));
                }
            });
        }
        Op::Sample { x, weights, kernel } => {
            let (n, h, w, d) = nodes[x.0].value.dims4("sample")?;
            let Op::Weights { weights: ws, .. } = &nodes[weights.0].op else {
                return Err(Error::Released);
            };
            let out_len = value.len() / n;
            let grads: Vec<_> = ws
                .iter()
                .enumerate()
                .map(|(b, wb)| {
                    sampler::down_backward_raw(
                        wb,
                        *kernel,
                        &grad[b * out_len..(b + 1) * out_len],
                        &nodes[x.0].value.data()[b * h * w * d..(b + 1) * h * w * d],
                        d,
                    )
                })
                .collect();
            scatter_sampler_grads(nodes, *x, *weights, grads);
        }
        Op::InverseSample { y, weights, kernel } => {
            let (n, h_r, w_r, d) = nodes[y.0].value.dims4("inverse_sample")?;
            let Op::Weights { weights: ws, .. } = &nodes[weights.0].op else {
                return Err(Error::Released);
            };
            let out_len = value.len() / n;
            let grads: Vec<_> = ws
                .iter()
                .enumerate()
                .map(|(b, wb)| {
                    sampler::up_backward_raw(
                        wb,
                        *kernel,
                        &grad[b * out_len..(b + 1) * out_len],
                        &nodes[y.0].value.data()[b * h_r * w_r * d..(b + 1) * h_r * w_r * d],
                        d,
                    )
                })
                .collect();
            scatter_sampler_grads(nodes, *y, *weights, grads);
        }
        Op::Resize { x } => {
            let dims = nodes[x.0].value.dims4("resize")?;
            let (_, oh, ow, _) = value.dims4("resize")?;
            acc(nodes, *x, |g, _| sampler::resize_backward_raw(grad, dims, oh, ow, g));
        }
    }
    Ok(())
}

fn scatter_sampler_grads<T: Real>(nodes: &mut [Node<T>], input: Var, weights: Var, grads: Vec<sampler::WeightGrads<T>>) {
    let per_in = nodes[input.0].value.len() / grads.len();
    acc(nodes, input, |g, _| {
        for (b, gr) in grads.iter().enumerate() {
            add_into(&mut g[b * per_in..(b + 1) * per_in], &gr.grad_input);
        }
    });
    let per_w = nodes[weights.0].value.len() / grads.len();
    acc(nodes, weights, |g, _| {
        for (b, gr) in grads.iter().enumerate() {
            let dst = &mut g[b * per_w..(b + 1) * per_w];
            let (gy, gx) = dst.split_at_mut(gr.grad_gy.len());
            add_into(gy, &gr.grad_gy);
            add_into(gx, &gr.grad_gx);
        }
    });
}
