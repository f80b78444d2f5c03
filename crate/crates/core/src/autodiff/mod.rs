//! Tape-based reverse-mode differentiation over dense f64 arrays.
//!
//! A [`Tape`] records every primitive applied during a forward pass and is
//! rebuilt per pass, which keeps variable-length rollouts (the forecast
//! horizon grows during curriculum training) trivial to handle. Replaying
//! the tape backward yields the exact analytic gradient of a scalar loss
//! with respect to every [`Parameter`] that influenced it; parameters that
//! never touched the tape keep their zero gradient.
//!
//! Shape mismatches panic (caller bugs); data-dependent failures such as a
//! non-scalar loss surface as [`Error`] values.

mod check;
mod param;

pub use check::{grad_check, BlockReport, GradCheckReport};
pub use param::{ensure_finite, Gradients, ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};
use crate::tensor::{self, Array};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    ScaleRows(NodeId, Vec<f64>),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    SoftmaxRows(NodeId),
    RowNormalize(NodeId),
    MinElem(NodeId, NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        dilation: usize,
    },
    AddBiasLast(NodeId, NodeId),
    ConcatLast(Vec<NodeId>),
    CropAxis {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    MeanAxis {
        x: NodeId,
        axis: usize,
    },
    SumAll(NodeId),
}

struct Node {
    value: Array,
    op: Op,
}

/// Records the primitive operations of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: std::collections::HashMap<ParamId, NodeId>,
}

/// Splits a shape into (outer, len, inner) blocks around `axis`.
fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant input. No gradient flows into it.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Array::scalar(v))
    }

    /// Records a leaf for a parameter. Repeated calls for the same
    /// parameter return the same node so its gradient accumulates once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Param(id));
        self.param_nodes.insert(id, n);
        n
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
            av.add(bv)
        };
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x - y)
                .collect();
            Array::from_vec(av.shape(), data)
        };
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x * y)
                .collect();
            Array::from_vec(av.shape(), data)
        };
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::MulScalar(a, c))
    }

    /// 1 - x, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.mul_scalar(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = tensor::matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transposed2();
        self.push(v, Op::Transpose(a))
    }

    /// Multiplies row i of a rank-2 array by the constant `scales[i]`.
    pub fn scale_rows(&mut self, a: NodeId, scales: &[f64]) -> NodeId {
        let v = {
            let av = self.value(a);
            assert_eq!(av.rank(), 2, "scale_rows needs rank 2");
            assert_eq!(av.shape()[0], scales.len(), "scale_rows length mismatch");
            let cols = av.shape()[1];
            let mut out = av.clone();
            for (i, &s) in scales.iter().enumerate() {
                for v in &mut out.data_mut()[i * cols..(i + 1) * cols] {
                    *v *= s;
                }
            }
            out
        };
        self.push(v, Op::ScaleRows(a, scales.to_vec()))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(tensor::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(tensor::softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = {
            let av = self.value(a);
            assert_eq!(av.rank(), 2, "softmax_rows needs rank 2");
            tensor::softmax_rows_unchecked(av)
        };
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Divides each row by its sum. Rows summing to zero become uniform
    /// 1/n and are treated as locally constant (no gradient).
    pub fn row_normalize(&mut self, a: NodeId) -> NodeId {
        let v = {
            let av = self.value(a);
            assert_eq!(av.rank(), 2, "row_normalize needs rank 2");
            let (rows, cols) = (av.shape()[0], av.shape()[1]);
            let mut out = av.clone();
            for r in 0..rows {
                let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
                let sum: f64 = row.iter().sum();
                if sum == 0.0 {
                    row.fill(1.0 / cols as f64);
                } else {
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
            }
            out
        };
        self.push(v, Op::RowNormalize(a))
    }

    /// Elementwise minimum. Gradient routes to the smaller input; ties go
    /// to `b`.
    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.shape(), bv.shape(), "min_elem shape mismatch");
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x.min(*y))
                .collect();
            Array::from_vec(av.shape(), data)
        };
        self.push(v, Op::MinElem(a, b))
    }

    /// Dilated temporal convolution with no padding. Input is
    /// `[N, T, C_in]`, kernel `[C_out, C_in, K]`, output
    /// `[N, T - (K-1)*dilation, C_out]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, dilation: usize) -> NodeId {
        let v = {
            let (xv, wv) = (self.value(x), self.value(w));
            assert_eq!(xv.rank(), 3, "conv1d input must be rank 3");
            assert_eq!(wv.rank(), 3, "conv1d kernel must be rank 3");
            let (n, t, c_in) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let (c_out, kc_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
            assert_eq!(c_in, kc_in, "conv1d channel mismatch");
            assert!(dilation >= 1, "dilation must be >= 1");
            let span = (k - 1) * dilation;
            assert!(
                t > span,
                "conv1d input time {t} too short for kernel {k} dilation {dilation}"
            );
            let t_out = t - span;
            let mut out = Array::zeros(&[n, t_out, c_out]);
            for bn in 0..n {
                for to in 0..t_out {
                    for co in 0..c_out {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            for kk in 0..k {
                                acc += xv.at3(bn, to + kk * dilation, ci) * wv.at3(co, ci, kk);
                            }
                        }
                        out.set3(bn, to, co, acc);
                    }
                }
            }
            out
        };
        self.push(v, Op::Conv1d { x, w, dilation })
    }

    /// Adds a vector over the last axis of `x`.
    pub fn add_bias_last(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (xv, bv) = (self.value(x), self.value(b));
            assert_eq!(bv.rank(), 1, "bias must be rank 1");
            let d = *xv.shape().last().expect("bias target needs rank >= 1");
            assert_eq!(d, bv.shape()[0], "bias length mismatch");
            let mut out = xv.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += bv.data()[i % d];
            }
            out
        };
        self.push(v, Op::AddBiasLast(x, b))
    }

    /// Concatenates along the last axis. All inputs must agree on the
    /// leading dimensions.
    pub fn concat_last(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty(), "concat_last needs at least one input");
        let v = {
            let first = self.value(inputs[0]);
            let lead = &first.shape()[..first.rank() - 1];
            let outer: usize = lead.iter().product();
            let mut widths = Vec::with_capacity(inputs.len());
            for &id in inputs {
                let s = self.value(id).shape();
                assert_eq!(&s[..s.len() - 1], lead, "concat_last leading dims differ");
                widths.push(s[s.len() - 1]);
            }
            let total: usize = widths.iter().sum();
            let mut shape = lead.to_vec();
            shape.push(total);
            let mut out = Array::zeros(&shape);
            for o in 0..outer {
                let mut offset = 0;
                for (&id, &w) in inputs.iter().zip(&widths) {
                    let src = self.value(id);
                    out.data_mut()[o * total + offset..o * total + offset + w]
                        .copy_from_slice(&src.data()[o * w..(o + 1) * w]);
                    offset += w;
                }
            }
            out
        };
        self.push(v, Op::ConcatLast(inputs.to_vec()))
    }

    /// Keeps `len` entries of `axis` starting at `start`.
    pub fn crop_axis(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let v = {
            let xv = self.value(x);
            let (outer, axis_len, inner) = axis_blocks(xv.shape(), axis);
            assert!(start + len <= axis_len, "crop_axis out of range");
            let mut shape = xv.shape().to_vec();
            shape[axis] = len;
            let mut out = Array::zeros(&shape);
            for o in 0..outer {
                for i in 0..len {
                    let src = (o * axis_len + start + i) * inner;
                    let dst = (o * len + i) * inner;
                    out.data_mut()[dst..dst + inner]
                        .copy_from_slice(&xv.data()[src..src + inner]);
                }
            }
            out
        };
        self.push(v, Op::CropAxis { x, axis, start })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = self.value(x).reshaped(shape);
        self.push(v, Op::Reshape(x))
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let v = {
            let xv = self.value(x);
            let (outer, axis_len, inner) = axis_blocks(xv.shape(), axis);
            let mut shape = xv.shape().to_vec();
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
            let mut out = Array::zeros(&shape);
            let scale = 1.0 / axis_len as f64;
            for o in 0..outer {
                for i in 0..axis_len {
                    let src = (o * axis_len + i) * inner;
                    for j in 0..inner {
                        out.data_mut()[o * inner + j] += xv.data()[src + j] * scale;
                    }
                }
            }
            out
        };
        self.push(v, Op::MeanAxis { x, axis })
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Array::scalar(self.value(x).data().iter().sum());
        self.push(v, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Replays the tape backward from a scalar loss and returns the
    /// gradient of the loss with respect to every parameter on the tape.
    pub fn backward(&self, loss: NodeId, n_params: usize) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));
        let mut out = Gradients::new(n_params);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(pid) => out.accumulate(*pid, &g),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g, self);
                    acc(&mut grads, *b, &g, self);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g, self);
                    acc_scaled(&mut grads, *b, &g, -1.0, self);
                }
                Op::Mul(a, b) => {
                    let ga = mul_arrays(&g, self.value(*b));
                    let gb = mul_arrays(&g, self.value(*a));
                    acc(&mut grads, *a, &ga, self);
                    acc(&mut grads, *b, &gb, self);
                }
                Op::AddScalar(a) => acc(&mut grads, *a, &g, self),
                Op::MulScalar(a, c) => acc_scaled(&mut grads, *a, &g, *c, self),
                Op::MatMul(a, b) => {
                    let bt = self.value(*b).transposed2();
                    let at = self.value(*a).transposed2();
                    let ga = tensor::matmul(&g, &bt);
                    let gb = tensor::matmul(&at, &g);
                    acc(&mut grads, *a, &ga, self);
                    acc(&mut grads, *b, &gb, self);
                }
                Op::Transpose(a) => {
                    let ga = g.transposed2();
                    acc(&mut grads, *a, &ga, self);
                }
                Op::ScaleRows(a, scales) => {
                    let cols = g.shape()[1];
                    let mut ga = g.clone();
                    for (r, &s) in scales.iter().enumerate() {
                        for v in &mut ga.data_mut()[r * cols..(r + 1) * cols] {
                            *v *= s;
                        }
                    }
                    acc(&mut grads, *a, &ga, self);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let ga = zip3(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    acc(&mut grads, *a, &ga, self);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let ga = zip3(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    acc(&mut grads, *a, &ga, self);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let ga = zip3(&g, x, |gv, xv| gv * tensor::sigmoid(xv));
                    acc(&mut grads, *a, &ga, self);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = zip3(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *a, &ga, self);
                }
                Op::Abs(a) => {
                    let x = self.value(*a);
                    let ga = zip3(&g, x, |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, &ga, self);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let (rows, cols) = (y.shape()[0], y.shape()[1]);
                    let mut ga = Array::zeros(y.shape());
                    for r in 0..rows {
                        let ys = &y.data()[r * cols..(r + 1) * cols];
                        let gs = &g.data()[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                        let out_row = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            out_row[c] = ys[c] * (gs[c] - dot);
                        }
                    }
                    acc(&mut grads, *a, &ga, self);
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let y = &self.nodes[i].value;
                    let (rows, cols) = (x.shape()[0], x.shape()[1]);
                    let mut ga = Array::zeros(x.shape());
                    for r in 0..rows {
                        let xs = &x.data()[r * cols..(r + 1) * cols];
                        let sum: f64 = xs.iter().sum();
                        if sum == 0.0 {
                            continue;
                        }
                        let ys = &y.data()[r * cols..(r + 1) * cols];
                        let gs = &g.data()[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                        let out_row = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            out_row[c] = (gs[c] - dot) / sum;
                        }
                    }
                    acc(&mut grads, *a, &ga, self);
                }
                Op::MinElem(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Array::zeros(av.shape());
                    let mut gb = Array::zeros(bv.shape());
                    for k in 0..g.numel() {
                        if av.data()[k] < bv.data()[k] {
                            ga.data_mut()[k] = g.data()[k];
                        } else {
                            gb.data_mut()[k] = g.data()[k];
                        }
                    }
                    acc(&mut grads, *a, &ga, self);
                    acc(&mut grads, *b, &gb, self);
                }
                Op::Conv1d { x, w, dilation } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, _t, c_in) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let (c_out, _, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                    let t_out = g.shape()[1];
                    let mut gx = Array::zeros(xv.shape());
                    let mut gw = Array::zeros(wv.shape());
                    for bn in 0..n {
                        for to in 0..t_out {
                            for co in 0..c_out {
                                let gv = g.at3(bn, to, co);
                                if gv == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    for kk in 0..k {
                                        let ti = to + kk * dilation;
                                        let xval = xv.at3(bn, ti, ci);
                                        let wval = wv.at3(co, ci, kk);
                                        gx.set3(bn, ti, ci, gx.at3(bn, ti, ci) + gv * wval);
                                        gw.set3(co, ci, kk, gw.at3(co, ci, kk) + gv * xval);
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut grads, *x, &gx, self);
                    acc(&mut grads, *w, &gw, self);
                }
                Op::AddBiasLast(x, b) => {
                    let d = self.value(*b).shape()[0];
                    let mut gb = Array::zeros(&[d]);
                    for (k, gv) in g.data().iter().enumerate() {
                        gb.data_mut()[k % d] += gv;
                    }
                    acc(&mut grads, *x, &g, self);
                    acc(&mut grads, *b, &gb, self);
                }
                Op::ConcatLast(inputs) => {
                    let total = *g.shape().last().unwrap();
                    let outer = g.numel() / total;
                    let mut offset = 0;
                    for &id in inputs {
                        let s = self.value(id).shape();
                        let w = *s.last().unwrap();
                        let mut gi = Array::zeros(s);
                        for o in 0..outer {
                            gi.data_mut()[o * w..(o + 1) * w].copy_from_slice(
                                &g.data()[o * total + offset..o * total + offset + w],
                            );
                        }
                        acc(&mut grads, id, &gi, self);
                        offset += w;
                    }
                }
                Op::CropAxis { x, axis, start } => {
                    let xv = self.value(*x);
                    let (outer, axis_len, inner) = axis_blocks(xv.shape(), *axis);
                    let len = g.shape()[*axis];
                    let mut gx = Array::zeros(xv.shape());
                    for o in 0..outer {
                        for ii in 0..len {
                            let dst = (o * axis_len + start + ii) * inner;
                            let src = (o * len + ii) * inner;
                            gx.data_mut()[dst..dst + inner]
                                .copy_from_slice(&g.data()[src..src + inner]);
                        }
                    }
                    acc(&mut grads, *x, &gx, self);
                }
                Op::Reshape(x) => {
                    let gx = g.reshaped(self.value(*x).shape());
                    acc(&mut grads, *x, &gx, self);
                }
                Op::MeanAxis { x, axis } => {
                    let xv = self.value(*x);
                    let (outer, axis_len, inner) = axis_blocks(xv.shape(), *axis);
                    let scale = 1.0 / axis_len as f64;
                    let mut gx = Array::zeros(xv.shape());
                    for o in 0..outer {
                        for ii in 0..axis_len {
                            let dst = (o * axis_len + ii) * inner;
                            for j in 0..inner {
                                gx.data_mut()[dst + j] = g.data()[o * inner + j] * scale;
                            }
                        }
                    }
                    acc(&mut grads, *x, &gx, self);
                }
                Op::SumAll(x) => {
                    let gv = g.item();
                    let gx = Array::full(self.value(*x).shape(), gv);
                    acc(&mut grads, *x, &gx, self);
                }
            }
        }
        Ok(out)
    }

    /// Convenience wrapper: backward plus accumulation into `store`.
    pub fn backward_into(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss, store.len())?;
        store.accumulate(&grads);
        Ok(())
    }
}

fn mul_arrays(a: &Array, b: &Array) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Array::from_vec(a.shape(), data)
}

fn zip3(g: &Array, x: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = g.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect();
    Array::from_vec(g.shape(), data)
}

fn acc(grads: &mut [Option<Array>], id: NodeId, g: &Array, tape: &Tape) {
    debug_assert_eq!(tape.shape(id), g.shape(), "gradient shape mismatch");
    match &mut grads[id.0] {
        Some(existing) => existing.axpy(1.0, g),
        slot => *slot = Some(g.clone()),
    }
}

fn acc_scaled(grads: &mut [Option<Array>], id: NodeId, g: &Array, scale: f64, tape: &Tape) {
    debug_assert_eq!(tape.shape(id), g.shape(), "gradient shape mismatch");
    match &mut grads[id.0] {
        Some(existing) => existing.axpy(scale, g),
        slot => {
            let mut gg = g.clone();
            for v in gg.data_mut() {
                *v *= scale;
            }
            *slot = Some(gg);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_loss_grad_is_one() {
        let mut store = ParamStore::new();
        let p = store.add("p", Array::scalar(4.0), true);
        let mut tape = Tape::new();
        let leaf = tape.param(&store, p);
        let grads = tape.backward(leaf, store.len()).unwrap();
        assert_eq!(grads.get(p).unwrap().item(), 1.0);
    }

    #[test]
    fn square_loss_grad() {
        let mut store = ParamStore::new();
        let p = store.add("p", Array::scalar(3.0), true);
        let mut tape = Tape::new();
        let leaf = tape.param(&store, p);
        let sq = tape.mul(leaf, leaf);
        let grads = tape.backward(sq, store.len()).unwrap();
        assert_eq!(grads.get(p).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let c = tape.constant(Array::zeros(&[2, 2]));
        assert!(tape.backward(c, 0).is_err());
    }

    #[test]
    fn untouched_param_gets_zero_grad() {
        let mut store = ParamStore::new();
        let p = store.add("used", Array::scalar(2.0), true);
        let q = store.add("unused", Array::scalar(5.0), true);
        let mut tape = Tape::new();
        let leaf = tape.param(&store, p);
        let loss = tape.mul(leaf, leaf);
        store.zero_grads();
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(p).grad.item(), 4.0);
        assert_eq!(store.get(q).grad.item(), 0.0);
        let _ = q;
    }

    #[test]
    fn param_node_is_shared() {
        let mut store = ParamStore::new();
        let p = store.add("p", Array::scalar(1.5), true);
        let mut tape = Tape::new();
        let a = tape.param(&store, p);
        let b = tape.param(&store, p);
        assert_eq!(a, b);
    }

    #[test]
    fn concat_and_crop_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.constant(Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(Array::from_vec(&[2, 1], vec![5.0, 6.0]));
        let cat = tape.concat_last(&[a, b]);
        assert_eq!(tape.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.crop_axis(cat, 1, 0, 2);
        assert_eq!(tape.value(back).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_shapes_and_values() {
        let mut tape = Tape::new();
        // One series of length 4, one channel; kernel [1,1,2], dilation 2.
        let x = tape.constant(Array::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(Array::from_vec(&[1, 1, 2], vec![10.0, 1.0]));
        let y = tape.conv1d(x, w, 2);
        assert_eq!(tape.shape(y), &[1, 2, 1]);
        // out[t] = 10*x[t] + x[t+2]
        assert_eq!(tape.value(y).data(), &[13.0, 24.0]);
    }

    #[test]
    fn row_normalize_handles_zero_rows() {
        let mut tape = Tape::new();
        let a = tape.constant(Array::from_vec(&[2, 3], vec![2.0, 6.0, 2.0, 0.0, 0.0, 0.0]));
        let p = tape.row_normalize(a);
        let v = tape.value(p);
        assert_eq!(&v.data()[..3], &[0.2, 0.6, 0.2]);
        for &x in &v.data()[3..] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_axis_middle() {
        let mut tape = Tape::new();
        let x = tape.constant(Array::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean_axis(x, 1);
        assert_eq!(tape.shape(m), &[1, 2]);
        assert_eq!(tape.value(m).data(), &[2.0, 3.0]);
    }
}
