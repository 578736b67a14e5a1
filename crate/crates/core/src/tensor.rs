//! Reverse-mode automatic differentiation over dense real tensors.
//!
//! A [`Graph`] is an append-only tape: every operation records its inputs by
//! id and produces a new node, so parents always precede children and the
//! backward sweep is a single reverse pass. The operator set is exactly what
//! the attention networks in this crate need — convolution, layer
//! normalization, softmax, GELU, matrix products, and a few index
//! rearrangements — nothing speculative.
//!
//! Scalars are generic: `f64` for gradient verification, `f32` for training
//! throughput. Summation order inside each operator is fixed, so forward and
//! backward passes are bit-deterministic for a given scalar type.
//!
//! Shape agreement is checked with assertions, as network topology is static
//! once a model is wired; [`Graph::backward`] returns an error for the one
//! misuse that depends on runtime values — differentiating a non-scalar.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter path registered twice: {0}")]
    DuplicateParam(String),
}

/// Real scalar usable in the graph: `f64` for checking, `f32` for speed.
pub trait Scalar:
    num_traits::Float + std::ops::AddAssign + std::ops::SubAssign + std::fmt::Debug + Default + 'static
{
    /// Gauss error function, needed for the exact GELU.
    fn erf(self) -> Self;
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

/// Convert an `f64` constant into the graph scalar type.
fn c<S: Scalar>(x: f64) -> S {
    S::from(x).expect("constant representable in scalar type")
}

/// Dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> TensorData<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must match shape {shape:?}"
        );
        TensorData { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        TensorData {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        TensorData {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: S) -> Self {
        TensorData {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n = shape.iter().product();
        TensorData {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Last-axis extent: the feature count for layout `[.., C]`.
    fn features(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Cast every element, e.g. `f64` reference values into `f32` training.
    pub fn cast<T: Scalar>(&self) -> TensorData<T> {
        TensorData {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| c::<T>(v.to_f64().unwrap())).collect(),
        }
    }
}

/// Handle to a node in a [`Graph`]; valid only for the graph that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    /// Elementwise division of `num` by a single-element variable.
    DivScalar { num: TensorId, den: TensorId },
    Matmul { a: TensorId, b: TensorId, ta: bool, tb: bool },
    Conv2d { x: TensorId, kernel: TensorId, bias: TensorId, stride: usize, groups: usize },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    Softmax { x: TensorId, axis: usize },
    Gelu(TensorId),
    Sum(TensorId),
    Reshape(TensorId),
    SliceFeatures { x: TensorId, start: usize },
    ConcatFeatures(Vec<TensorId>),
    SplitRows(TensorId),
    MergeRows(TensorId),
}

#[derive(Debug)]
struct Node<S> {
    value: TensorData<S>,
    grad: Vec<S>,
    op: Op,
    /// Set once gradient has flowed into this node during a backward pass.
    touched: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: TensorData<S>, op: Op) -> TensorId {
        let grad = vec![S::zero(); value.numel()];
        self.nodes.push(Node {
            value,
            grad,
            op,
            touched: false,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: TensorData<S>) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &TensorData<S> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn same_shape(&self, a: TensorId, b: TensorId) -> Vec<usize> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert_eq!(sa, sb, "elementwise operands must share a shape");
        sa.to_vec()
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let shape = self.same_shape(a, b);
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        self.push(TensorData::new(shape, data), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let shape = self.same_shape(a, b);
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        self.push(TensorData::new(shape, data), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let shape = self.same_shape(a, b);
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(TensorData::new(shape, data), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let f = c::<S>(factor);
        let value = TensorData::new(
            self.value(a).shape().to_vec(),
            self.nodes[a.0].value.data().iter().map(|&x| x * f).collect(),
        );
        self.push(value, Op::Scale(a, factor))
    }

    /// Divide every element of `num` by the single-element variable `den`.
    pub fn div_scalar_var(&mut self, num: TensorId, den: TensorId) -> TensorId {
        assert_eq!(self.value(den).numel(), 1, "divisor must be a single-element tensor");
        let d = self.value(den).data()[0];
        let value = TensorData::new(
            self.value(num).shape().to_vec(),
            self.nodes[num.0].value.data().iter().map(|&x| x / d).collect(),
        );
        self.push(value, Op::DivScalar { num, den })
    }

    /// 2-D product `op(a) * op(b)` with optional transposes.
    pub fn matmul(&mut self, a: TensorId, ta: bool, b: TensorId, tb: bool) -> TensorId {
        let value = matmul_data(&self.nodes[a.0].value, ta, &self.nodes[b.0].value, tb);
        self.push(value, Op::Matmul { a, b, ta, tb })
    }

    /// 2-D convolution over `[H, W, Cin]` with kernel `[k, k, Cin/groups,
    /// Cout]`, zero same-padding (odd `k`), and output `[ceil(H/stride),
    /// ceil(W/stride), Cout]`. `groups = Cin = Cout` is the depthwise case;
    /// `k = 1` the pointwise case.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        kernel: TensorId,
        bias: TensorId,
        stride: usize,
        groups: usize,
    ) -> TensorId {
        let value = conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
            stride,
            groups,
        );
        self.push(value, Op::Conv2d { x, kernel, bias, stride, groups })
    }

    /// Normalize over the feature (last) axis per position, then apply the
    /// per-feature affine `gain, bias`.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> TensorId {
        assert!(eps > 0.0, "layer_norm needs a positive eps");
        let xv = &self.nodes[x.0].value;
        let features = xv.features();
        assert_eq!(self.value(gain).shape(), &[features], "gain must be [C]");
        assert_eq!(self.value(bias).shape(), &[features], "bias must be [C]");
        let mut out = xv.clone();
        let gd = self.nodes[gain.0].value.data();
        let bd = self.nodes[bias.0].value.data();
        for row in out.data.chunks_mut(features) {
            let (mean, inv_sd) = row_moments(row, eps);
            for (v, (&g, &b)) in row.iter_mut().zip(gd.iter().zip(bd)) {
                *v = (*v - mean) * inv_sd * g + b;
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, eps })
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> TensorId {
        let xv = &self.nodes[x.0].value;
        assert!(axis < xv.shape().len(), "softmax axis out of range");
        let mut out = xv.clone();
        for_each_lane(out.shape.clone(), axis, |start, stride, len| {
            let mut hi = S::neg_infinity();
            for a in 0..len {
                hi = hi.max(out.data[start + a * stride]);
            }
            let mut total = S::zero();
            for a in 0..len {
                let e = (out.data[start + a * stride] - hi).exp();
                out.data[start + a * stride] = e;
                total += e;
            }
            for a in 0..len {
                out.data[start + a * stride] = out.data[start + a * stride] / total;
            }
        });
        self.push(out, Op::Softmax { x, axis })
    }

    /// Exact GELU `x * Phi(x)` with the Gaussian CDF via `erf`.
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let value = TensorData::new(
            self.value(x).shape().to_vec(),
            self.nodes[x.0].value.data().iter().map(|&v| v * gauss_cdf(v)).collect(),
        );
        self.push(value, Op::Gelu(x))
    }

    /// Total of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let mut total = S::zero();
        for &v in self.nodes[x.0].value.data() {
            total += v;
        }
        self.push(TensorData::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            xv.numel(),
            shape.iter().product::<usize>(),
            "reshape must preserve element count"
        );
        let value = TensorData::new(shape.to_vec(), xv.data.clone());
        self.push(value, Op::Reshape(x))
    }

    /// Contiguous feature-axis slice `[.., start..start+len]`.
    pub fn slice_features(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let xv = &self.nodes[x.0].value;
        let features = xv.features();
        assert!(start + len <= features, "feature slice out of range");
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let mut data = Vec::with_capacity(xv.numel() / features * len);
        for row in xv.data.chunks(features) {
            data.extend_from_slice(&row[start..start + len]);
        }
        self.push(TensorData::new(shape, data), Op::SliceFeatures { x, start })
    }

    /// Concatenate along the feature axis; leading extents must agree.
    pub fn concat_features(&mut self, xs: &[TensorId]) -> TensorId {
        assert!(!xs.is_empty(), "concat needs at least one input");
        let lead = {
            let s = self.value(xs[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let mut features = 0;
        for &x in xs {
            let s = self.value(x).shape();
            assert_eq!(&s[..s.len() - 1], &lead[..], "concat inputs must share leading extents");
            features += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut shape = lead;
        shape.push(features);
        let mut data = Vec::with_capacity(rows * features);
        for r in 0..rows {
            for &x in xs {
                let xv = &self.nodes[x.0].value;
                let fc = xv.features();
                data.extend_from_slice(&xv.data[r * fc..(r + 1) * fc]);
            }
        }
        self.push(TensorData::new(shape, data), Op::ConcatFeatures(xs.to_vec()))
    }

    /// Antenna-splitting rearrangement `[H, W, C] -> [H/2, W, 2C]`: the top
    /// half of the rows becomes features `[0, C)`, the bottom half features
    /// `[C, 2C)`. Exact inverse of [`Graph::merge_rows`].
    pub fn split_rows(&mut self, x: TensorId) -> TensorId {
        let xv = &self.nodes[x.0].value;
        let (h, w, cf) = dims3(xv.shape());
        assert!(h % 2 == 0, "row count must be even to split");
        let half = h / 2;
        let mut data = Vec::with_capacity(xv.numel());
        for oh in 0..half {
            for ow in 0..w {
                for oc in 0..2 * cf {
                    let (ih, ic) = if oc < cf { (oh, oc) } else { (oh + half, oc - cf) };
                    data.push(xv.data[(ih * w + ow) * cf + ic]);
                }
            }
        }
        self.push(TensorData::new(vec![half, w, 2 * cf], data), Op::SplitRows(x))
    }

    /// Antenna-concatenation rearrangement `[H, W, C] -> [2H, W, C/2]`,
    /// exact inverse of [`Graph::split_rows`].
    pub fn merge_rows(&mut self, x: TensorId) -> TensorId {
        let xv = &self.nodes[x.0].value;
        let (h, w, cf) = dims3(xv.shape());
        assert!(cf % 2 == 0, "feature count must be even to merge");
        let half_c = cf / 2;
        let mut data = Vec::with_capacity(xv.numel());
        for oh in 0..2 * h {
            for ow in 0..w {
                for oc in 0..half_c {
                    let (ih, ic) = if oh < h { (oh, oc) } else { (oh - h, oc + half_c) };
                    data.push(xv.data[(ih * w + ow) * cf + ic]);
                }
            }
        }
        self.push(TensorData::new(vec![2 * h, w, half_c], data), Op::MergeRows(x))
    }

    /// Reset all gradient buffers to zero.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = S::zero());
            node.touched = false;
        }
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients accumulate
    /// into existing buffers, so repeated calls sum their contributions;
    /// call [`Graph::zero_grads`] between independent passes. Interior
    /// gradients are scratch space and reflect only the latest sweep.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.touched = false;
            if !matches!(node.op, Op::Leaf) {
                node.grad.iter_mut().for_each(|g| *g = S::zero());
            }
        }
        self.nodes[loss.0].grad[0] += S::one();
        self.nodes[loss.0].touched = true;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].touched {
                continue;
            }
            let op = self.nodes[i].op.clone();
            // Parents always precede node i on the tape, so split there.
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut parents[a.0], &node.grad, |g, _| g);
                    accumulate(&mut parents[b.0], &node.grad, |g, _| g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut parents[a.0], &node.grad, |g, _| g);
                    accumulate(&mut parents[b.0], &node.grad, |g, _| -g);
                }
                Op::Mul(a, b) => {
                    if a.0 == b.0 {
                        let two = c::<S>(2.0);
                        let vals: Vec<S> = parents[a.0].value.data.clone();
                        accumulate(&mut parents[a.0], &node.grad, |g, k| two * g * vals[k]);
                    } else {
                        let (pa, pb) = two_nodes(parents, a.0, b.0);
                        for k in 0..node.grad.len() {
                            pa.grad[k] += node.grad[k] * pb.value.data[k];
                            pb.grad[k] += node.grad[k] * pa.value.data[k];
                        }
                        pa.touched = true;
                        pb.touched = true;
                    }
                }
                Op::Scale(a, factor) => {
                    let f = c::<S>(factor);
                    accumulate(&mut parents[a.0], &node.grad, |g, _| g * f);
                }
                Op::DivScalar { num, den } => {
                    let d = parents[den.0].value.data[0];
                    let mut den_grad = S::zero();
                    for (k, &g) in node.grad.iter().enumerate() {
                        den_grad += g * node.value.data[k];
                    }
                    let num_vals_len = node.grad.len();
                    {
                        let p = &mut parents[num.0];
                        for k in 0..num_vals_len {
                            p.grad[k] += node.grad[k] / d;
                        }
                        p.touched = true;
                    }
                    let p = &mut parents[den.0];
                    p.grad[0] -= den_grad / d;
                    p.touched = true;
                }
                Op::Matmul { a, b, ta, tb } => {
                    let gshape = node.value.shape().to_vec();
                    let gdata = TensorData::new(gshape, node.grad.clone());
                    let da = if ta {
                        matmul_data(&parents[b.0].value, tb, &gdata, true)
                    } else {
                        matmul_data(&gdata, false, &parents[b.0].value, !tb)
                    };
                    let db = if tb {
                        matmul_data(&gdata, true, &parents[a.0].value, ta)
                    } else {
                        matmul_data(&parents[a.0].value, !ta, &gdata, false)
                    };
                    accumulate(&mut parents[a.0], &da.data, |g, _| g);
                    accumulate(&mut parents[b.0], &db.data, |g, _| g);
                }
                Op::Conv2d { x, kernel, bias, stride, groups } => {
                    conv2d_backward(parents, node, x, kernel, bias, stride, groups);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    layer_norm_backward(parents, node, x, gain, bias, eps);
                }
                Op::Softmax { x, axis } => {
                    let y = &node.value;
                    let grad = &node.grad;
                    let p = &mut parents[x.0];
                    for_each_lane(y.shape.clone(), axis, |start, stride, len| {
                        let mut dot = S::zero();
                        for a in 0..len {
                            let k = start + a * stride;
                            dot += grad[k] * y.data[k];
                        }
                        for a in 0..len {
                            let k = start + a * stride;
                            p.grad[k] += y.data[k] * (grad[k] - dot);
                        }
                    });
                    p.touched = true;
                }
                Op::Gelu(x) => {
                    let vals: Vec<S> = parents[x.0].value.data.clone();
                    accumulate(&mut parents[x.0], &node.grad, |g, k| {
                        let v = vals[k];
                        g * (gauss_cdf(v) + v * gauss_pdf(v))
                    });
                }
                Op::Sum(x) => {
                    let g = node.grad[0];
                    let p = &mut parents[x.0];
                    p.grad.iter_mut().for_each(|pg| *pg += g);
                    p.touched = true;
                }
                Op::Reshape(x) => {
                    accumulate(&mut parents[x.0], &node.grad, |g, _| g);
                }
                Op::SliceFeatures { x, start } => {
                    let len = node.value.features();
                    let p = &mut parents[x.0];
                    let features = p.value.features();
                    for (r, grow) in node.grad.chunks(len).enumerate() {
                        for (j, &g) in grow.iter().enumerate() {
                            p.grad[r * features + start + j] += g;
                        }
                    }
                    p.touched = true;
                }
                Op::ConcatFeatures(ref xs) => {
                    let features = node.value.features();
                    let rows = node.value.numel() / features;
                    for r in 0..rows {
                        let mut offset = 0;
                        for &x in xs {
                            let p = &mut parents[x.0];
                            let fc = p.value.features();
                            for j in 0..fc {
                                p.grad[r * fc + j] += node.grad[r * features + offset + j];
                            }
                            p.touched = true;
                            offset += fc;
                        }
                    }
                }
                Op::SplitRows(x) => {
                    let (half, w, c2) = dims3(node.value.shape());
                    let cf = c2 / 2;
                    let p = &mut parents[x.0];
                    let mut k = 0;
                    for oh in 0..half {
                        for ow in 0..w {
                            for oc in 0..c2 {
                                let (ih, ic) =
                                    if oc < cf { (oh, oc) } else { (oh + half, oc - cf) };
                                p.grad[(ih * w + ow) * cf + ic] += node.grad[k];
                                k += 1;
                            }
                        }
                    }
                    p.touched = true;
                }
                Op::MergeRows(x) => {
                    let (h2, w, half_c) = dims3(node.value.shape());
                    let h = h2 / 2;
                    let cf = half_c * 2;
                    let p = &mut parents[x.0];
                    let mut k = 0;
                    for oh in 0..h2 {
                        for ow in 0..w {
                            for oc in 0..half_c {
                                let (ih, ic) =
                                    if oh < h { (oh, oc) } else { (oh - h, oc + half_c) };
                                p.grad[(ih * w + ow) * cf + ic] += node.grad[k];
                                k += 1;
                            }
                        }
                    }
                    p.touched = true;
                }
            }
        }
        Ok(())
    }
}

/// Apply `f(gradient, flat_index)` of `grads` into a parent node.
fn accumulate<S: Scalar>(parent: &mut Node<S>, grads: &[S], f: impl Fn(S, usize) -> S) {
    assert_eq!(parent.grad.len(), grads.len(), "gradient length mismatch");
    for (k, &g) in grads.iter().enumerate() {
        parent.grad[k] += f(g, k);
    }
    parent.touched = true;
}

/// Two distinct mutable node references from one slice.
fn two_nodes<S>(nodes: &mut [Node<S>], a: usize, b: usize) -> (&mut Node<S>, &mut Node<S>) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = nodes.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = nodes.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected a rank-3 tensor, got {shape:?}");
    (shape[0], shape[1], shape[2])
}

/// Standard normal CDF via `erf`.
fn gauss_cdf<S: Scalar>(x: S) -> S {
    let half = c::<S>(0.5);
    half * (S::one() + (x / c::<S>(std::f64::consts::SQRT_2)).erf())
}

/// Standard normal density.
fn gauss_pdf<S: Scalar>(x: S) -> S {
    let half = c::<S>(0.5);
    (-(half * x * x)).exp() / c::<S>((2.0 * std::f64::consts::PI).sqrt())
}

/// Mean and inverse standard deviation of one feature row.
fn row_moments<S: Scalar>(row: &[S], eps: f64) -> (S, S) {
    let n = c::<S>(row.len() as f64);
    let mut mean = S::zero();
    for &v in row {
        mean += v;
    }
    mean = mean / n;
    let mut var = S::zero();
    for &v in row {
        var += (v - mean) * (v - mean);
    }
    var = var / n;
    (mean, (var + c::<S>(eps)).sqrt().recip())
}

/// Visit every 1-D lane along `axis`: calls `f(start, stride, len)`.
fn for_each_lane(shape: Vec<usize>, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * len * inner + i, inner, len);
        }
    }
}

/// Plain triple-loop 2-D product with optional transposes; fixed summation
/// order keeps results bit-reproducible.
fn matmul_data<S: Scalar>(
    a: &TensorData<S>,
    ta: bool,
    b: &TensorData<S>,
    tb: bool,
) -> TensorData<S> {
    assert_eq!(a.shape().len(), 2, "matmul needs 2-D operands");
    assert_eq!(b.shape().len(), 2, "matmul needs 2-D operands");
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(ka, kb, "matmul inner extents disagree: {ka} vs {kb}");
    let at = |i: usize, l: usize| if ta { a.data[l * ac + i] } else { a.data[i * ac + l] };
    let bt = |l: usize, j: usize| if tb { b.data[j * bc + l] } else { b.data[l * bc + j] };
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for l in 0..ka {
            let av = at(i, l);
            if av == S::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * bt(l, j);
            }
        }
    }
    TensorData::new(vec![m, n], out)
}

fn conv2d_forward<S: Scalar>(
    x: &TensorData<S>,
    kernel: &TensorData<S>,
    bias: &TensorData<S>,
    stride: usize,
    groups: usize,
) -> TensorData<S> {
    let (h, w, cin) = dims3(x.shape());
    let ks = kernel.shape();
    assert_eq!(ks.len(), 4, "kernel must be [k, k, Cin/groups, Cout]");
    let (k, cin_g, cout) = (ks[0], ks[2], ks[3]);
    assert_eq!(ks[0], ks[1], "only square kernels supported");
    assert!(k % 2 == 1, "same-padding requires an odd kernel extent");
    assert!(stride >= 1, "stride must be at least 1");
    assert_eq!(cin % groups, 0, "input features must divide into groups");
    assert_eq!(cout % groups, 0, "output features must divide into groups");
    assert_eq!(cin / groups, cin_g, "kernel input extent disagrees with groups");
    assert_eq!(bias.shape(), &[cout], "bias must be [Cout]");
    let cout_g = cout / groups;
    let pad = (k - 1) / 2;
    let oh_max = h.div_ceil(stride);
    let ow_max = w.div_ceil(stride);
    let mut out = vec![S::zero(); oh_max * ow_max * cout];
    for oh in 0..oh_max {
        for ow in 0..ow_max {
            let base = (oh * ow_max + ow) * cout;
            out[base..base + cout].copy_from_slice(bias.data());
            for ki in 0..k {
                let ih = (oh * stride + ki).wrapping_sub(pad);
                if ih >= h {
                    continue;
                }
                for kj in 0..k {
                    let iw = (ow * stride + kj).wrapping_sub(pad);
                    if iw >= w {
                        continue;
                    }
                    let xrow = (ih * w + iw) * cin;
                    for g in 0..groups {
                        for ci in 0..cin_g {
                            let xv = x.data[xrow + g * cin_g + ci];
                            if xv == S::zero() {
                                continue;
                            }
                            let krow = ((ki * k + kj) * cin_g + ci) * cout + g * cout_g;
                            for co in 0..cout_g {
                                out[base + g * cout_g + co] += xv * kernel.data[krow + co];
                            }
                        }
                    }
                }
            }
        }
    }
    TensorData::new(vec![oh_max, ow_max, cout], out)
}

fn conv2d_backward<S: Scalar>(
    parents: &mut [Node<S>],
    node: &Node<S>,
    x: TensorId,
    kernel: TensorId,
    bias: TensorId,
    stride: usize,
    groups: usize,
) {
    let (h, w, cin) = dims3(parents[x.0].value.shape());
    let ks = parents[kernel.0].value.shape().to_vec();
    let (k, cin_g, cout) = (ks[0], ks[2], ks[3]);
    let cout_g = cout / groups;
    let pad = (k - 1) / 2;
    let (oh_max, ow_max, _) = dims3(node.value.shape());
    let xvals: Vec<S> = parents[x.0].value.data.clone();
    let kvals: Vec<S> = parents[kernel.0].value.data.clone();
    for oh in 0..oh_max {
        for ow in 0..ow_max {
            let base = (oh * ow_max + ow) * cout;
            for co in 0..cout {
                parents[bias.0].grad[co] += node.grad[base + co];
            }
            for ki in 0..k {
                let ih = (oh * stride + ki).wrapping_sub(pad);
                if ih >= h {
                    continue;
                }
                for kj in 0..k {
                    let iw = (ow * stride + kj).wrapping_sub(pad);
                    if iw >= w {
                        continue;
                    }
                    let xrow = (ih * w + iw) * cin;
                    for g in 0..groups {
                        for ci in 0..cin_g {
                            let xv = xvals[xrow + g * cin_g + ci];
                            let krow = ((ki * k + kj) * cin_g + ci) * cout + g * cout_g;
                            let mut dx = S::zero();
                            for co in 0..cout_g {
                                let gv = node.grad[base + g * cout_g + co];
                                parents[kernel.0].grad[krow + co] += xv * gv;
                                dx += kvals[krow + co] * gv;
                            }
                            parents[x.0].grad[xrow + g * cin_g + ci] += dx;
                        }
                    }
                }
            }
        }
    }
    parents[x.0].touched = true;
    parents[kernel.0].touched = true;
    parents[bias.0].touched = true;
}

fn layer_norm_backward<S: Scalar>(
    parents: &mut [Node<S>],
    node: &Node<S>,
    x: TensorId,
    gain: TensorId,
    bias: TensorId,
    eps: f64,
) {
    let features = node.value.features();
    let rows = node.value.numel() / features;
    let n = c::<S>(features as f64);
    let xvals: Vec<S> = parents[x.0].value.data.clone();
    let gvals: Vec<S> = parents[gain.0].value.data.clone();
    for r in 0..rows {
        let row = &xvals[r * features..(r + 1) * features];
        let (mean, inv_sd) = row_moments(row, eps);
        // dL/dxhat and its projections onto the constant and xhat directions.
        let mut mean_gp = S::zero();
        let mut mean_gpx = S::zero();
        for j in 0..features {
            let xhat = (row[j] - mean) * inv_sd;
            let gp = node.grad[r * features + j] * gvals[j];
            mean_gp += gp;
            mean_gpx += gp * xhat;
        }
        mean_gp = mean_gp / n;
        mean_gpx = mean_gpx / n;
        for j in 0..features {
            let k = r * features + j;
            let xhat = (row[j] - mean) * inv_sd;
            let gp = node.grad[k] * gvals[j];
            parents[x.0].grad[k] += (gp - mean_gp - xhat * mean_gpx) * inv_sd;
            parents[gain.0].grad[j] += node.grad[k] * xhat;
            parents[bias.0].grad[j] += node.grad[k];
        }
    }
    parents[x.0].touched = true;
    parents[gain.0].touched = true;
    parents[bias.0].touched = true;
}

/// Named parameter set with per-parameter SGD momentum state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    params: BTreeMap<String, TensorData<S>>,
    velocity: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            velocity: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: &str, value: TensorData<S>) -> Result<(), TensorError> {
        if self.params.contains_key(path) {
            return Err(TensorError::DuplicateParam(path.to_string()));
        }
        self.params.insert(path.to_string(), value);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&TensorData<S>> {
        self.params.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut TensorData<S>> {
        self.params.get_mut(path)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn param_count(&self) -> usize {
        self.params.values().map(TensorData::numel).sum()
    }

    /// Iterate `(path, tensor)` in sorted path order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorData<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Register every parameter as a leaf of `graph`, in sorted path order.
    /// Returns the bindings consumed by [`sgd_momentum_step`].
    pub fn bind(&self, graph: &mut Graph<S>) -> Vec<(String, TensorId)> {
        self.params
            .iter()
            .map(|(name, value)| (name.clone(), graph.leaf(value.clone())))
            .collect()
    }

    /// One SGD update with classical momentum and coupled weight decay for a
    /// single parameter: `g <- g + lambda w; v <- mu v + g; w <- w - gamma v`.
    /// The velocity buffer is created as zeros on first use.
    pub fn sgd_step(&mut self, name: &str, grad: &[S], lr: f64, momentum: f64, weight_decay: f64) {
        let (gamma, mu, lambda) = (c::<S>(lr), c::<S>(momentum), c::<S>(weight_decay));
        let w = self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(grad.len(), w.numel(), "gradient/parameter size mismatch for {name}");
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![S::zero(); grad.len()]);
        for k in 0..grad.len() {
            let g = grad[k] + lambda * w.data[k];
            v[k] = mu * v[k] + g;
            w.data[k] -= gamma * v[k];
        }
    }
}

/// SGD-with-momentum step over every bound parameter, reading gradients off
/// the graph. See [`ParamStore::sgd_step`] for the update rule.
pub fn sgd_momentum_step<S: Scalar>(
    store: &mut ParamStore<S>,
    graph: &Graph<S>,
    bindings: &[(String, TensorId)],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for (name, id) in bindings {
        store.sgd_step(name, graph.grad(*id), lr, momentum, weight_decay);
    }
}

/// Relative gap used by the gradient checker:
/// `|a - n| / max(floor, |a|, |n|)` with a small floor so near-zero
/// derivatives compare absolutely.
pub fn relative_gap(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central finite difference of `f` at one coordinate of one input.
pub fn finite_difference_grad<F>(
    f: &F,
    inputs: &[TensorData<f64>],
    input_idx: usize,
    coord: usize,
    eps: f64,
) -> f64
where
    F: Fn(&mut Graph<f64>, &[TensorId]) -> TensorId,
{
    let eval = |delta: f64| {
        let mut probe = inputs.to_vec();
        probe[input_idx].data_mut()[coord] += delta;
        let mut graph = Graph::new();
        let ids: Vec<TensorId> = probe.into_iter().map(|t| graph.leaf(t)).collect();
        let out = f(&mut graph, &ids);
        assert_eq!(graph.value(out).numel(), 1, "grad check needs a scalar function");
        graph.value(out).data()[0]
    };
    (eval(eps) - eval(-eps)) / (2.0 * eps)
}

/// Compare reverse-mode gradients of `f` against central differences on a
/// random subset of coordinates (at most `samples` per input tensor).
/// Returns the worst [`relative_gap`]. 64-bit only by construction.
pub fn grad_check<F>(f: F, inputs: &[TensorData<f64>], eps: f64, samples: usize, seed: u64) -> f64
where
    F: Fn(&mut Graph<f64>, &[TensorId]) -> TensorId,
{
    let mut graph = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let out = f(&mut graph, &ids);
    assert_eq!(graph.value(out).numel(), 1, "grad check needs a scalar function");
    graph.backward(out).expect("scalar loss");
    let mut rng = crate::rng::stream(seed, crate::rng::StreamDomain::Test, 0);
    let mut worst = 0.0f64;
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            use rand::Rng;
            (0..samples).map(|_| rng.gen_range(0..n)).collect()
        };
        for coord in coords {
            let analytic = graph.grad(ids[idx])[coord];
            let numeric = finite_difference_grad(&f, inputs, idx, coord, eps);
            worst = worst.max(relative_gap(analytic, numeric));
        }
    }
    worst
}
