use std::collections::HashMap;

use super::kernels::{col2im, gemm, im2col, nchw_to_rows, rows_to_nchw, ConvGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    stride: usize,
    pad: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param {
        store: u64,
        id: ParamId,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Concat0(Vec<Var>),
    Slice0(Var, usize),
    SelectRow(Var, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumSq(Var),
    BceWithLogits(Var, Vec<f64>),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    ChannelDot(Var, Var),
    ScaleLocations(Var, Var),
    LstmCell(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Param { .. } => vec![],
            MatMul(a, b)
            | Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddRow(a, b)
            | ChannelDot(a, b)
            | ScaleLocations(a, b)
            | LstmCell(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddScalar(a)
            | Relu(a)
            | LeakyRelu(a, _)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Softmax(a)
            | SliceCols(a, _)
            | Slice0(a, _)
            | SelectRow(a, _)
            | Reshape(a)
            | Sum(a)
            | Mean(a)
            | SumSq(a)
            | BceWithLogits(a, _)
            | SoftmaxCrossEntropy(a, _) => vec![*a],
            ConcatCols(v) | Concat0(v) => v.clone(),
            Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | ConvTranspose2d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations supporting reverse-mode differentiation.
///
/// Build one per forward pass. Operations are evaluated eagerly; the graph
/// keeps every intermediate value so `backward` can replay the chain rule.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `[rows, cols]` view of a tensor whose last dimension is the column axis.
fn as_matrix(t: &Tensor) -> (usize, usize) {
    let cols = *t.shape().last().unwrap();
    (t.numel() / cols, cols)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param { .. } => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input whose gradient is kept on the graph, readable via [`Graph::grad`].
    pub fn input(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Records a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(
            store.value(id).clone(),
            Op::Param {
                store: store.uid(),
                id,
            },
        )
    }

    /// Records a parameter by name; panics if the store lacks it, which is a
    /// model-construction bug rather than a runtime condition.
    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Var {
        let id = store
            .id(name)
            .unwrap_or_else(|| panic!("model has no parameter `{name}`"));
        self.param(store, id)
    }

    /// Gradient accumulated on an [`Graph::input`] leaf by `backward`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.leaf_grads
            .get(&v.0)
            .map(|g| Tensor::new(self.value(v).shape().to_vec(), g.clone()).unwrap())
    }

    // ---------------------------------------------------------------------
    // Forward operators

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            ta.data(),
            false,
            tb.data(),
            false,
            0.0,
            &mut out,
        );
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a length-`n` row vector to every row of `a` (last dimension `n`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(row));
        let (_, cols) = as_matrix(ta);
        if tb.numel() != cols {
            return Err(shape_err("add_row", ta, tb));
        }
        let bias = tb.data();
        let mut data = ta.data().to_vec();
        for r in data.chunks_mut(cols) {
            for (x, b) in r.iter_mut().zip(bias) {
                *x += b;
            }
        }
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (_, cols) = as_matrix(t);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let v = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(v, Op::Softmax(a))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        if first.shape().len() != 2 {
            return Err(shape_err("concat_cols", first, first));
        }
        let rows = first.shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.shape()[0] != rows {
                return Err(shape_err("concat_cols", first, t));
            }
            widths.push(t.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let v = Tensor::new([rows, total], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 || start >= end || end > t.shape()[1] {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + end]);
        }
        let v = Tensor::new([rows, end - start], data)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Concatenates along the leading (batch) dimension.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let v = Tensor::stack0(&values)?;
        Ok(self.push(v, Op::Concat0(parts.to_vec())))
    }

    /// Rows `start..end` along the leading (batch) dimension.
    pub fn slice0(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a).slice0(start, end)?;
        Ok(self.push(v, Op::Slice0(a, start)))
    }

    /// Row `index` of a 2-D tensor, as `[1, cols]`.
    pub fn select_row(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 || index >= t.shape()[0] {
            return Err(Error::Shape {
                op: "select_row",
                lhs: t.shape().to_vec(),
                rhs: vec![index],
            });
        }
        let cols = t.shape()[1];
        let v = Tensor::new(
            [1, cols],
            t.data()[index * cols..(index + 1) * cols].to_vec(),
        )?;
        Ok(self.push(v, Op::SelectRow(a, index)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::new(shape.to_vec(), t.data().to_vec()).map_err(|_| Error::Shape {
            op: "reshape",
            lhs: t.shape().to_vec(),
            rhs: shape.to_vec(),
        })?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Squared L2 norm of all elements.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSq(a))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and constant
    /// targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.numel() != targets.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&l, &y)| l.max(0.0) - l * y + (-l.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits(logits, targets.to_vec()),
        ))
    }

    /// Mean categorical cross-entropy of row-wise softmax against labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = as_matrix(t);
        if rows != labels.len() || labels.iter().any(|&l| l >= cols) {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let mut loss = 0.0;
        for (row, &label) in t.data().chunks(cols).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        loss /= rows as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, labels.to_vec()),
        ))
    }

    fn conv_geom(&self, input: &Tensor, kernel: usize, spec: ConvSpec) -> ConvGeom {
        ConvGeom {
            channels: input.shape()[1],
            height: input.shape()[2],
            width: input.shape()[3],
            kernel,
            stride: spec.stride,
            pad: spec.pad,
        }
    }

    /// 2-D convolution. `input [N, C, H, W]`, `weight [O, C, k, k]`,
    /// `bias [O]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.shape().len() != 4
            || w.shape().len() != 4
            || w.shape()[1] != x.shape()[1]
            || w.shape()[2] != w.shape()[3]
            || b.numel() != w.shape()[0]
            || stride == 0
            || x.shape()[2] + 2 * pad < w.shape()[2]
            || x.shape()[3] + 2 * pad < w.shape()[2]
        {
            return Err(shape_err("conv2d", x, w));
        }
        let spec = ConvSpec { stride, pad };
        let g = self.conv_geom(x, w.shape()[2], spec);
        let (n, o) = (x.shape()[0], w.shape()[0]);
        let p = g.positions();
        let mut cols = vec![0.0; n * p * g.patch()];
        im2col(x.data(), n, &g, &mut cols);
        let mut rows = vec![0.0; n * p * o];
        gemm(
            n * p,
            g.patch(),
            o,
            1.0,
            &cols,
            false,
            w.data(),
            true,
            0.0,
            &mut rows,
        );
        for r in rows.chunks_mut(o) {
            for (v, bb) in r.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        let mut out = vec![0.0; rows.len()];
        rows_to_nchw(&rows, n, o, p, &mut out);
        let v = Tensor::new([n, o, g.out_height(), g.out_width()], out)?;
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
        ))
    }

    /// Transposed 2-D convolution (the adjoint of [`Graph::conv2d`] in its
    /// input). `input [N, C, H, W]`, `weight [C, O, k, k]`, `bias [O]`;
    /// output spatial size is `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.shape().len() != 4
            || w.shape().len() != 4
            || w.shape()[0] != x.shape()[1]
            || w.shape()[2] != w.shape()[3]
            || b.numel() != w.shape()[1]
            || stride == 0
        {
            return Err(shape_err("conv_transpose2d", x, w));
        }
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[1], w.shape()[2]);
        let full_h = (h - 1) * stride + k;
        let full_w = (wd - 1) * stride + k;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(shape_err("conv_transpose2d", x, w));
        }
        let g = ConvGeom {
            channels: o,
            height: full_h - 2 * pad,
            width: full_w - 2 * pad,
            kernel: k,
            stride,
            pad,
        };
        if g.out_height() != h || g.out_width() != wd {
            return Err(shape_err("conv_transpose2d", x, w));
        }
        let p = h * wd;
        let mut xr = vec![0.0; n * p * c];
        nchw_to_rows(x.data(), n, c, p, &mut xr);
        let mut cols = vec![0.0; n * p * g.patch()];
        gemm(
            n * p,
            c,
            g.patch(),
            1.0,
            &xr,
            false,
            w.data(),
            false,
            0.0,
            &mut cols,
        );
        let mut out = vec![0.0; n * g.plane()];
        col2im(&cols, n, &g, &mut out);
        let plane = g.height * g.width;
        for img in out.chunks_mut(o * plane) {
            for (ch, bb) in img.chunks_mut(plane).zip(b.data()) {
                ch.iter_mut().for_each(|v| *v += bb);
            }
        }
        let v = Tensor::new([n, o, g.height, g.width], out)?;
        Ok(self.push(
            v,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                spec: ConvSpec { stride, pad },
            },
        ))
    }

    /// Per-location dot product with a per-sample channel vector:
    /// `x [B, C, H, W]`, `v [B, C]` -> `[B, H*W]`.
    pub fn channel_dot(&mut self, x: Var, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        if tx.shape().len() != 4
            || tv.shape().len() != 2
            || tv.shape()[0] != tx.shape()[0]
            || tv.shape()[1] != tx.shape()[1]
        {
            return Err(shape_err("channel_dot", tx, tv));
        }
        let (b, c) = (tx.shape()[0], tx.shape()[1]);
        let p = tx.shape()[2] * tx.shape()[3];
        let mut out = vec![0.0; b * p];
        for n in 0..b {
            for ch in 0..c {
                let w = tv.data()[n * c + ch];
                let src = &tx.data()[(n * c + ch) * p..(n * c + ch + 1) * p];
                for (o, s) in out[n * p..(n + 1) * p].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let t = Tensor::new([b, p], out)?;
        Ok(self.push(t, Op::ChannelDot(x, v)))
    }

    /// Multiplies every channel at a location by a per-location factor:
    /// `x [B, C, H, W]`, `s [B, H*W]` -> `[B, C, H, W]`.
    pub fn scale_locations(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if tx.shape().len() != 4
            || ts.shape().len() != 2
            || ts.shape()[0] != tx.shape()[0]
            || ts.shape()[1] != tx.shape()[2] * tx.shape()[3]
        {
            return Err(shape_err("scale_locations", tx, ts));
        }
        let (b, c) = (tx.shape()[0], tx.shape()[1]);
        let p = ts.shape()[1];
        let mut out = tx.data().to_vec();
        for n in 0..b {
            let f = &ts.data()[n * p..(n + 1) * p];
            for ch in 0..c {
                for (o, s) in out[(n * c + ch) * p..(n * c + ch + 1) * p]
                    .iter_mut()
                    .zip(f)
                {
                    *o *= s;
                }
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::ScaleLocations(x, s)))
    }

    /// One LSTM step. `gates [B, 4H]` holds the pre-activations in the order
    /// input, forget, output, candidate; `c_prev [B, H]`. Returns `[B, 2H]`
    /// holding the new hidden state followed by the new cell state.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (tg, tc) = (self.value(gates), self.value(c_prev));
        if tg.shape().len() != 2
            || tc.shape().len() != 2
            || tg.shape()[0] != tc.shape()[0]
            || tg.shape()[1] != 4 * tc.shape()[1]
        {
            return Err(shape_err("lstm_cell", tg, tc));
        }
        let (b, h) = (tc.shape()[0], tc.shape()[1]);
        let mut out = vec![0.0; b * 2 * h];
        for n in 0..b {
            let a = &tg.data()[n * 4 * h..(n + 1) * 4 * h];
            let cp = &tc.data()[n * h..(n + 1) * h];
            for j in 0..h {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[h + j]);
                let o = sigmoid(a[2 * h + j]);
                let g = a[3 * h + j].tanh();
                let c = f * cp[j] + i * g;
                out[n * 2 * h + j] = o * c.tanh();
                out[n * 2 * h + h + j] = c;
            }
        }
        let t = Tensor::new([b, 2 * h], out)?;
        Ok(self.push(t, Op::LstmCell(gates, c_prev)))
    }

    // ---------------------------------------------------------------------
    // Reverse pass

    /// Back-propagates from the scalar `loss`.
    ///
    /// Gradients are accumulated (not overwritten) into the parameter
    /// buffers of `stores` and into the gradient of every [`Graph::input`]
    /// leaf. Parameters belonging to stores not listed are treated as
    /// constants, and nodes that cannot reach any target are skipped.
    pub fn backward(&mut self, loss: Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let targets: Vec<u64> = stores.iter().map(|s| s.uid()).collect();
        let last = loss.0;
        let mut reach = vec![false; last + 1];
        for i in 0..=last {
            let node = &self.nodes[i];
            reach[i] = match &node.op {
                Op::Leaf => node.requires_grad,
                Op::Param { store, .. } => targets.contains(store),
                op => op.inputs().iter().any(|v| reach[v.0]),
            };
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; last + 1];
        grads[last] = Some(vec![1.0]);
        for i in (0..=last).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    let slot = self
                        .leaf_grads
                        .entry(i)
                        .or_insert_with(|| vec![0.0; g.len()]);
                    slot.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                }
                Op::Param { store, id } => {
                    let st = stores
                        .iter_mut()
                        .find(|s| s.uid() == *store)
                        .expect("reachable parameter belongs to a target store");
                    let buf = &mut st.get_mut(*id).grad;
                    buf.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                }
                _ => self.backward_node(i, &g, &reach, &mut grads),
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], reach: &[bool], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        // Returns the zero-initialised gradient slot for `v`, or None when
        // `v` does not lead to any target.
        fn slot<'a>(
            grads: &'a mut [Option<Vec<f64>>],
            reach: &[bool],
            nodes: &[Node],
            v: Var,
        ) -> Option<&'a mut Vec<f64>> {
            if !reach[v.0] {
                return None;
            }
            let n = nodes[v.0].value.numel();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }
        let nodes = &self.nodes;
        macro_rules! unary {
            ($a:expr, $f:expr) => {
                if let Some(s) = slot(grads, reach, nodes, $a) {
                    let x = val($a);
                    for k in 0..s.len() {
                        s[k] += $f(g[k], x[k], out[k]);
                    }
                }
            };
        }
        match &node.op {
            Op::Leaf | Op::Param { .. } => unreachable!(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    gemm(m, n, k, 1.0, g, false, tb.data(), true, 1.0, s);
                }
                if let Some(s) = slot(grads, reach, nodes, *b) {
                    gemm(k, m, n, 1.0, ta.data(), true, g, false, 1.0, s);
                }
            }
            Op::Add(a, b) => {
                unary!(*a, |g: f64, _, _| g);
                unary!(*b, |g: f64, _, _| g);
            }
            Op::Sub(a, b) => {
                unary!(*a, |g: f64, _, _| g);
                unary!(*b, |g: f64, _, _| -g);
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    for k in 0..s.len() {
                        s[k] += g[k] * xb[k];
                    }
                }
                if let Some(s) = slot(grads, reach, nodes, *b) {
                    for k in 0..s.len() {
                        s[k] += g[k] * xa[k];
                    }
                }
            }
            Op::AddRow(a, b) => {
                unary!(*a, |g: f64, _, _| g);
                if let Some(s) = slot(grads, reach, nodes, *b) {
                    let cols = s.len();
                    for row in g.chunks(cols) {
                        s.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Scale(a, c) => unary!(*a, |g: f64, _, _| c * g),
            Op::AddScalar(a) => unary!(*a, |g: f64, _, _| g),
            Op::Relu(a) => unary!(*a, |g: f64, x: f64, _| if x > 0.0 { g } else { 0.0 }),
            Op::LeakyRelu(a, slope) => {
                unary!(*a, |g: f64, x: f64, _| if x > 0.0 { g } else { slope * g })
            }
            Op::Tanh(a) => unary!(*a, |g: f64, _, y: f64| g * (1.0 - y * y)),
            Op::Sigmoid(a) => unary!(*a, |g: f64, _, y: f64| g * y * (1.0 - y)),
            Op::Exp(a) => unary!(*a, |g: f64, _, y: f64| g * y),
            Op::Softmax(a) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let (_, cols) = as_matrix(&node.value);
                    for ((sr, yr), gr) in
                        s.chunks_mut(cols).zip(out.chunks(cols)).zip(g.chunks(cols))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for k in 0..cols {
                            sr[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.shape()[1];
                    if let Some(s) = slot(grads, reach, nodes, *p) {
                        for r in 0..rows {
                            for c in 0..w {
                                s[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let cols = nodes[a.0].value.shape()[1];
                    let w = node.value.shape()[1];
                    for (r, gr) in g.chunks(w).enumerate() {
                        for (c, x) in gr.iter().enumerate() {
                            s[r * cols + start + c] += x;
                        }
                    }
                }
            }
            Op::Concat0(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.numel();
                    if let Some(s) = slot(grads, reach, nodes, *p) {
                        s.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(d, x)| *d += x);
                    }
                    offset += n;
                }
            }
            Op::Slice0(a, start) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let stride = s.len() / nodes[a.0].value.shape()[0];
                    s[start * stride..start * stride + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, x)| *d += x);
                }
            }
            Op::SelectRow(a, index) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let cols = g.len();
                    s[index * cols..(index + 1) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, x)| *d += x);
                }
            }
            Op::Reshape(a) => unary!(*a, |g: f64, _, _| g),
            Op::Sum(a) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    s.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let n = s.len() as f64;
                    s.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::SumSq(a) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let x = val(*a);
                    for k in 0..s.len() {
                        s[k] += 2.0 * x[k] * g[0];
                    }
                }
            }
            Op::BceWithLogits(a, targets) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let x = val(*a);
                    let n = targets.len() as f64;
                    for k in 0..s.len() {
                        s[k] += g[0] * (sigmoid(x[k]) - targets[k]) / n;
                    }
                }
            }
            Op::SoftmaxCrossEntropy(a, labels) => {
                if let Some(s) = slot(grads, reach, nodes, *a) {
                    let x = val(*a);
                    let cols = s.len() / labels.len();
                    let n = labels.len() as f64;
                    let mut p = vec![0.0; cols];
                    for (r, &label) in labels.iter().enumerate() {
                        p.copy_from_slice(&x[r * cols..(r + 1) * cols]);
                        softmax_in_place(&mut p);
                        p[label] -= 1.0;
                        for c in 0..cols {
                            s[r * cols + c] += g[0] * p[c] / n;
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let (x, w) = (&nodes[input.0].value, &nodes[weight.0].value);
                let geom = self.conv_geom(x, w.shape()[2], *spec);
                let (n, o) = (x.shape()[0], w.shape()[0]);
                let p = geom.positions();
                let mut grows = vec![0.0; n * p * o];
                nchw_to_rows(g, n, o, p, &mut grows);
                if let Some(s) = slot(grads, reach, nodes, *bias) {
                    for r in grows.chunks(o) {
                        s.iter_mut().zip(r).for_each(|(d, x)| *d += x);
                    }
                }
                if reach[weight.0] {
                    let mut cols = vec![0.0; n * p * geom.patch()];
                    im2col(x.data(), n, &geom, &mut cols);
                    let s = slot(grads, reach, nodes, *weight).unwrap();
                    gemm(
                        o,
                        n * p,
                        geom.patch(),
                        1.0,
                        &grows,
                        true,
                        &cols,
                        false,
                        1.0,
                        s,
                    );
                }
                if reach[input.0] {
                    let mut dcols = vec![0.0; n * p * geom.patch()];
                    gemm(
                        n * p,
                        o,
                        geom.patch(),
                        1.0,
                        &grows,
                        false,
                        w.data(),
                        false,
                        0.0,
                        &mut dcols,
                    );
                    let s = slot(grads, reach, nodes, *input).unwrap();
                    col2im(&dcols, n, &geom, s);
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let (x, w) = (&nodes[input.0].value, &nodes[weight.0].value);
                let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let (o, k) = (w.shape()[1], w.shape()[2]);
                let geom = ConvGeom {
                    channels: o,
                    height: node.value.shape()[2],
                    width: node.value.shape()[3],
                    kernel: k,
                    stride: spec.stride,
                    pad: spec.pad,
                };
                let p = h * wd;
                if let Some(s) = slot(grads, reach, nodes, *bias) {
                    let plane = geom.height * geom.width;
                    for img in g.chunks(o * plane) {
                        for (d, ch) in s.iter_mut().zip(img.chunks(plane)) {
                            *d += ch.iter().sum::<f64>();
                        }
                    }
                }
                if reach[input.0] || reach[weight.0] {
                    let mut dcols = vec![0.0; n * p * geom.patch()];
                    im2col(g, n, &geom, &mut dcols);
                    if reach[weight.0] {
                        let mut xr = vec![0.0; n * p * c];
                        nchw_to_rows(x.data(), n, c, p, &mut xr);
                        let s = slot(grads, reach, nodes, *weight).unwrap();
                        gemm(
                            c,
                            n * p,
                            geom.patch(),
                            1.0,
                            &xr,
                            true,
                            &dcols,
                            false,
                            1.0,
                            s,
                        );
                    }
                    if reach[input.0] {
                        let mut dxr = vec![0.0; n * p * c];
                        gemm(
                            n * p,
                            geom.patch(),
                            c,
                            1.0,
                            &dcols,
                            false,
                            w.data(),
                            true,
                            0.0,
                            &mut dxr,
                        );
                        let mut dx = vec![0.0; dxr.len()];
                        rows_to_nchw(&dxr, n, c, p, &mut dx);
                        let s = slot(grads, reach, nodes, *input).unwrap();
                        s.iter_mut().zip(&dx).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::ChannelDot(x, v) => {
                let (tx, tv) = (&nodes[x.0].value, &nodes[v.0].value);
                let (b, c) = (tx.shape()[0], tx.shape()[1]);
                let p = tx.shape()[2] * tx.shape()[3];
                if let Some(s) = slot(grads, reach, nodes, *x) {
                    for n in 0..b {
                        for ch in 0..c {
                            let w = tv.data()[n * c + ch];
                            let dst = &mut s[(n * c + ch) * p..(n * c + ch + 1) * p];
                            for (d, gg) in dst.iter_mut().zip(&g[n * p..(n + 1) * p]) {
                                *d += w * gg;
                            }
                        }
                    }
                }
                if let Some(s) = slot(grads, reach, nodes, *v) {
                    for n in 0..b {
                        for ch in 0..c {
                            let src = &tx.data()[(n * c + ch) * p..(n * c + ch + 1) * p];
                            s[n * c + ch] += src
                                .iter()
                                .zip(&g[n * p..(n + 1) * p])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                }
            }
            Op::ScaleLocations(x, f) => {
                let (tx, tf) = (&nodes[x.0].value, &nodes[f.0].value);
                let (b, c) = (tx.shape()[0], tx.shape()[1]);
                let p = tf.shape()[1];
                if let Some(s) = slot(grads, reach, nodes, *x) {
                    for n in 0..b {
                        let fac = &tf.data()[n * p..(n + 1) * p];
                        for ch in 0..c {
                            let off = (n * c + ch) * p;
                            for q in 0..p {
                                s[off + q] += g[off + q] * fac[q];
                            }
                        }
                    }
                }
                if let Some(s) = slot(grads, reach, nodes, *f) {
                    for n in 0..b {
                        for ch in 0..c {
                            let off = (n * c + ch) * p;
                            for q in 0..p {
                                s[n * p + q] += g[off + q] * tx.data()[off + q];
                            }
                        }
                    }
                }
            }
            Op::LstmCell(gates, c_prev) => {
                let (tg, tc) = (&nodes[gates.0].value, &nodes[c_prev.0].value);
                let (b, h) = (tc.shape()[0], tc.shape()[1]);
                let mut dgates = vec![0.0; b * 4 * h];
                let mut dcp = vec![0.0; b * h];
                for n in 0..b {
                    let a = &tg.data()[n * 4 * h..(n + 1) * 4 * h];
                    let cp = &tc.data()[n * h..(n + 1) * h];
                    for j in 0..h {
                        let i = sigmoid(a[j]);
                        let f = sigmoid(a[h + j]);
                        let o = sigmoid(a[2 * h + j]);
                        let gg = a[3 * h + j].tanh();
                        let c = out[n * 2 * h + h + j];
                        let tcell = c.tanh();
                        let dh = g[n * 2 * h + j];
                        let dc = g[n * 2 * h + h + j] + dh * o * (1.0 - tcell * tcell);
                        let base = n * 4 * h;
                        dgates[base + j] = dc * gg * i * (1.0 - i);
                        dgates[base + h + j] = dc * cp[j] * f * (1.0 - f);
                        dgates[base + 2 * h + j] = dh * tcell * o * (1.0 - o);
                        dgates[base + 3 * h + j] = dc * i * (1.0 - gg * gg);
                        dcp[n * h + j] = dc * f;
                    }
                }
                if let Some(s) = slot(grads, reach, nodes, *gates) {
                    s.iter_mut().zip(&dgates).for_each(|(d, x)| *d += x);
                }
                if let Some(s) = slot(grads, reach, nodes, *c_prev) {
                    s.iter_mut().zip(&dcp).for_each(|(d, x)| *d += x);
                }
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn unit_kernel_conv_is_identity() {
        let mut g = Graph::new();
        let img: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let x = g.constant(t(&[1, 1, 4, 4], &img));
        let w = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &img[..]);
        assert_eq!(g.shape(y), &[1, 1, 4, 4]);
    }

    #[test]
    fn same_padding_keeps_spatial_size() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([2, 3, 5, 5], 1.0));
        let w = g.constant(Tensor::full([4, 3, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros([4]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 5, 5]);
        // centre sees the full 3x3x3 window, a corner only 2x2x3
        assert_eq!(g.value(y).data()[12], 27.0);
        assert_eq!(g.value(y).data()[0], 12.0);
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([1, 2, 4, 4], 1.0));
        let w = g.constant(Tensor::full([2, 3, 4, 4], 0.5));
        let b = g.constant(Tensor::zeros([3]));
        let y = g.conv_transpose2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 8, 8]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([4]));
        let y = g.softmax(x);
        assert_eq!(g.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn shape_errors_name_operator_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y, &mut []).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([5]));
        let y = g.tanh(x);
        let s = g.sum(y);
        g.backward(s, &mut []).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([2]));
        assert!(g.backward(x, &mut []).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let y = g.mul(w, w).unwrap();
        g.backward(y, &mut [&mut store]).unwrap();
        g.backward(y, &mut [&mut store]).unwrap();
        assert_eq!(store.grad(id), &[8.0]);
    }

    #[test]
    fn backward_skips_stores_not_listed() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let ia = a.add("w", Tensor::scalar(2.0)).unwrap();
        let ib = b.add("w", Tensor::scalar(5.0)).unwrap();
        let mut g = Graph::new();
        let wa = g.param(&a, ia);
        let wb = g.param(&b, ib);
        let y = g.mul(wa, wb).unwrap();
        g.backward(y, &mut [&mut a]).unwrap();
        assert_eq!(a.grad(ia), &[5.0]);
        assert_eq!(b.grad(ib), &[0.0]);
    }

    #[test]
    fn lstm_cell_matches_closed_form() {
        let mut g = Graph::new();
        let gates = g.constant(t(&[1, 4], &[0.0, 0.0, 0.0, 0.0]));
        let c = g.constant(t(&[1, 1], &[1.0]));
        let y = g.lstm_cell(gates, c).unwrap();
        // i = f = o = 0.5, candidate 0: c' = 0.5, h = 0.5 * tanh(0.5)
        let out = g.value(y).data();
        assert!((out[1] - 0.5).abs() < 1e-15);
        assert!((out[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
    }
}
