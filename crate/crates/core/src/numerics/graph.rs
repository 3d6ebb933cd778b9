//! Tape-based reverse-mode differentiation over a fixed primitive set.
//!
//! A [`Graph`] records every value produced while a loss is evaluated. Nodes
//! are appended in evaluation order, so walking the tape backwards visits every
//! consumer before its producers and a single pass yields all gradients.

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride and zero padding of a three-dimensional convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn uniform(stride: usize, pad: usize) -> Self {
        Self {
            stride: [stride; 3],
            pad: [pad; 3],
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    AddRowBroadcast(Var, Var),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    AdaptiveAvgPool(Var),
    NormalizeRows(Var),
    LogSumExpRows(Var),
    PickPerRow(Var, Vec<usize>),
    Stack(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Evaluation tape.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
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
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Constant input: receives a gradient but is not a parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a named parameter of `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .value(name)
            .ok_or_else(|| Error::NoSuchParameterGroup(name.to_string()))?
            .clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    fn binary_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Absolute value. The derivative at zero is taken as +1 (right derivative),
    /// so gradient checks at the kink report the mismatch instead of hiding it.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(out, Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    fn dims2(&self, a: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(a) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(format!("{what} expects a matrix, got {s:?}"))),
        }
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a, "matmul lhs")?;
        let (k2, m) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(shape_err(format!("matmul inner dims {k} vs {k2}")));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `[m]` vector to every row of a `[n, m]` matrix.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "add_row_broadcast")?;
        if self.shape(bias) != [m] {
            return Err(shape_err(format!(
                "bias {:?} does not match row width {m}",
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(m) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(out, Op::AddRowBroadcast(a, bias)))
    }

    /// `x [in] -> x W + b`, with `W [in, out]` and `b [out]`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let n_in = self.value(x).len();
        let row = self.reshape(x, &[1, n_in])?;
        let prod = self.matmul(row, weight)?;
        let shifted = self.add_row_broadcast(prod, bias)?;
        let n_out = self.value(shifted).len();
        self.reshape(shifted, &[n_out])
    }

    /// Convolution of `input [C, T, H, W]` with `weight [O, C, KT, KH, KW]`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom) -> Result<Var> {
        let out = conv3d_forward(self.value(input), self.value(weight), self.value(bias), geom)?;
        Ok(self.push(
            out,
            Op::Conv3d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Convolution of `input [C, H, W]` with `weight [O, C, KH, KW]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (c, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(shape_err(format!("conv2d input must be [C,H,W], got {s:?}"))),
        };
        let (o, ci, kh, kw) = match self.shape(weight) {
            [o, ci, kh, kw] => (*o, *ci, *kh, *kw),
            s => return Err(shape_err(format!("conv2d weight must be 4-D, got {s:?}"))),
        };
        let x = self.reshape(input, &[c, 1, h, w])?;
        let k = self.reshape(weight, &[o, ci, 1, kh, kw])?;
        let geom = ConvGeom {
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        };
        let y = self.conv3d(x, k, bias, geom)?;
        let (ho, wo) = (self.shape(y)[2], self.shape(y)[3]);
        self.reshape(y, &[o, ho, wo])
    }

    /// Average pooling of the trailing dims of `[C, d1, .., dk]` onto a fixed grid.
    ///
    /// Output cell `i` of an axis of length `n` pooled to `m` covers
    /// `floor(i n / m) .. ceil((i + 1) n / m)`.
    pub fn adaptive_avg_pool(&mut self, a: Var, grid: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != grid.len() + 1 || grid.len() > 3 {
            return Err(shape_err(format!(
                "pool grid {grid:?} incompatible with {shape:?}"
            )));
        }
        for (&g, &n) in grid.iter().zip(&shape[1..]) {
            if g == 0 || g > n {
                return Err(shape_err(format!("pool grid {grid:?} exceeds {shape:?}")));
            }
        }
        let plan = PoolPlan::new(&shape, grid);
        let out = plan.forward(self.value(a));
        Ok(self.push(out, Op::AdaptiveAvgPool(a)))
    }

    /// L2-normalizes every row of a `[n, d]` matrix.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (_, d) = self.dims2(a, "normalize_rows")?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::DegenerateEmbedding);
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::NormalizeRows(a)))
    }

    /// Row-wise log-sum-exp of `[n, m]`, computed with max subtraction.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "logsumexp_rows")?;
        let data = self
            .value(a)
            .data()
            .chunks(m)
            .map(logsumexp)
            .collect::<Vec<_>>();
        let out = Tensor::new(vec![n], data)?;
        Ok(self.push(out, Op::LogSumExpRows(a)))
    }

    /// Selects `a[i, index[i]]` for every row.
    pub fn pick_per_row(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let (n, m) = self.dims2(a, "pick_per_row")?;
        if index.len() != n || index.iter().any(|&j| j >= m) {
            return Err(shape_err(format!(
                "pick indices {index:?} invalid for [{n}, {m}]"
            )));
        }
        let src = self.value(a).data();
        let data = index.iter().enumerate().map(|(i, &j)| src[i * m + j]).collect();
        let out = Tensor::new(vec![n], data)?;
        Ok(self.push(out, Op::PickPerRow(a, index)))
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("stack of nothing".into()))?;
        let inner = self.shape(*first).to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(*first).len());
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(shape_err(format!(
                    "stack: {:?} vs {inner:?}",
                    self.shape(p)
                )));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Stack(parts.to_vec())))
    }

    /// Mean softmax cross-entropy of `logits [n, k]` against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lse = self.logsumexp_rows(logits)?;
        let picked = self.pick_per_row(logits, labels.to_vec())?;
        let neg = self.scale(picked, -1.0);
        let per_row = self.add(lse, neg)?;
        Ok(self.mean(per_row))
    }

    /// Backward pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        self.backward_with_seed(root, Tensor::filled(self.shape(root), 1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `root`) to every node.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.shape(root) {
            return Err(shape_err(format!(
                "seed {:?} does not match root {:?}",
                seed.shape(),
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                accumulate(grads, *a, zip_map(g, vb, |g, y| g * y));
                accumulate(grads, *b, zip_map(g, va, |g, x| g * x));
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.map(|v| v * f)),
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip_map(g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                accumulate(grads, *a, zip_map(g, y, |g, y| g * (1.0 - y * y)));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip_map(g, x, |g, x| if x >= 0.0 { g } else { -g }));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip_map(g, x, |g, x| 2.0 * g * x));
            }
            Op::Sum(a) => {
                accumulate(grads, *a, Tensor::filled(self.shape(*a), g.item()));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                accumulate(grads, *a, Tensor::filled(self.shape(*a), g.item() / n));
            }
            Op::Reshape(a) => {
                let back = g.clone().reshaped(self.shape(*a))?;
                accumulate(grads, *a, back);
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims2(*a, "transpose")?;
                let gd = g.data();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[i * c + j] = gd[j * r + i];
                    }
                }
                accumulate(grads, *a, Tensor::new(vec![r, c], data)?);
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.dims2(*a, "matmul")?;
                let (_, m) = self.dims2(*b, "matmul")?;
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let gd = g.data();
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; n * k];
                for i in 0..n {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += gd[i * m + j] * vb[p * m + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    for p in 0..k {
                        let x = va[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        let row = &gd[i * m..(i + 1) * m];
                        for (dst, gv) in gb[p * m..(p + 1) * m].iter_mut().zip(row) {
                            *dst += x * gv;
                        }
                    }
                }
                accumulate(grads, *a, Tensor::new(vec![n, k], ga)?);
                accumulate(grads, *b, Tensor::new(vec![k, m], gb)?);
            }
            Op::AddRowBroadcast(a, bias) => {
                let m = self.value(*bias).len();
                let mut gb = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (dst, v) in gb.iter_mut().zip(row) {
                        *dst += v;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *bias, Tensor::new(vec![m], gb)?);
            }
            Op::Conv3d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (gx, gw, gb) =
                    conv3d_backward(self.value(*input), self.value(*weight), g, *geom);
                accumulate(grads, *input, gx);
                accumulate(grads, *weight, gw);
                accumulate(grads, *bias, gb);
            }
            Op::AdaptiveAvgPool(a) => {
                let in_shape = self.shape(*a).to_vec();
                let grid = &node.value.shape()[1..];
                let plan = PoolPlan::new(&in_shape, grid);
                accumulate(grads, *a, plan.backward(g));
            }
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let y = &node.value;
                let d = x.shape()[1];
                let mut out = vec![0.0; x.len()];
                for ((xr, yr), (gr, or)) in x
                    .data()
                    .chunks(d)
                    .zip(y.data().chunks(d))
                    .zip(g.data().chunks(d).zip(out.chunks_mut(d)))
                {
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * dot) / norm;
                    }
                }
                accumulate(grads, *a, Tensor::new(x.shape().to_vec(), out)?);
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let m = x.shape()[1];
                let mut out = vec![0.0; x.len()];
                for (i, (xr, or)) in x.data().chunks(m).zip(out.chunks_mut(m)).enumerate() {
                    let lse = node.value.data()[i];
                    let gi = g.data()[i];
                    for (o, &v) in or.iter_mut().zip(xr) {
                        *o = gi * (v - lse).exp();
                    }
                }
                accumulate(grads, *a, Tensor::new(x.shape().to_vec(), out)?);
            }
            Op::PickPerRow(a, index) => {
                let shape = self.shape(*a).to_vec();
                let m = shape[1];
                let mut out = Tensor::zeros(&shape);
                for (i, &j) in index.iter().enumerate() {
                    out.data_mut()[i * m + j] = g.data()[i];
                }
                accumulate(grads, *a, out);
            }
            Op::Stack(parts) => {
                let inner = self.value(parts[0]).len();
                for (k, &p) in parts.iter().enumerate() {
                    let slice = g.data()[k * inner..(k + 1) * inner].to_vec();
                    accumulate(grads, p, Tensor::new(self.shape(p).to_vec(), slice)?);
                }
            }
        }
        Ok(())
    }

    /// Names and gradients of every parameter leaf reached by `grads`.
    ///
    /// A parameter bound more than once contributes one entry per binding.
    pub fn param_grads<'a>(
        &'a self,
        grads: &'a Gradients,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.nodes.iter().enumerate().filter_map(move |(i, node)| match &node.op {
            Op::Param(name) => grads.grads.get(i)?.as_ref().map(|g| (name.as_str(), g)),
            _ => None,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map preserves shape")
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (dst, y) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *dst += x * y;
            }
        }
    }
    out
}

struct ConvDims {
    c: usize,
    t: usize,
    h: usize,
    w: usize,
    o: usize,
    k: [usize; 3],
    out: [usize; 3],
}

fn conv_dims(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Result<ConvDims> {
    let [c, t, h, wd] = *x.shape() else {
        return Err(shape_err(format!("conv3d input must be 4-D, got {:?}", x.shape())));
    };
    let [o, ci, kt, kh, kw] = *w.shape() else {
        return Err(shape_err(format!("conv3d weight must be 5-D, got {:?}", w.shape())));
    };
    if ci != c {
        return Err(shape_err(format!("conv3d channels {c} vs weight {ci}")));
    }
    let mut out = [0; 3];
    for (axis, (&n, &k)) in [t, h, wd].iter().zip(&[kt, kh, kw]).enumerate() {
        let span = n + 2 * geom.pad[axis];
        if geom.stride[axis] == 0 || span < k {
            return Err(shape_err(format!(
                "conv3d kernel {k} too large for axis {axis} of length {n}"
            )));
        }
        out[axis] = (span - k) / geom.stride[axis] + 1;
    }
    Ok(ConvDims {
        c,
        t,
        h,
        w: wd,
        o,
        k: [kt, kh, kw],
        out,
    })
}

/// Valid kernel offsets `lo..hi` for output position `z` along one axis.
#[inline]
fn kernel_span(z: usize, stride: usize, pad: usize, k: usize, n: usize) -> (usize, usize, isize) {
    let origin = (z * stride) as isize - pad as isize;
    let lo = (-origin).max(0) as usize;
    let hi = ((n as isize - origin).min(k as isize)).max(0) as usize;
    (lo, hi.max(lo), origin)
}

fn conv3d_forward(x: &Tensor, w: &Tensor, b: &Tensor, geom: ConvGeom) -> Result<Tensor> {
    let d = conv_dims(x, w, geom)?;
    if b.shape() != [d.o] {
        return Err(shape_err(format!("conv3d bias {:?} vs {} filters", b.shape(), d.o)));
    }
    let [kt, kh, kw] = d.k;
    let [ot, oh, ow] = d.out;
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; d.o * ot * oh * ow];
    let plane = d.h * d.w;
    let vol = d.t * plane;
    let kvol = kt * kh * kw;
    for oc in 0..d.o {
        let wbase = oc * d.c * kvol;
        for zt in 0..ot {
            let (t0, t1, tor) = kernel_span(zt, geom.stride[0], geom.pad[0], kt, d.t);
            for zy in 0..oh {
                let (y0, y1, yor) = kernel_span(zy, geom.stride[1], geom.pad[1], kh, d.h);
                for zx in 0..ow {
                    let (x0, x1, xor) = kernel_span(zx, geom.stride[2], geom.pad[2], kw, d.w);
                    let mut acc = b.data()[oc];
                    for ic in 0..d.c {
                        let xb = ic * vol;
                        let wb = wbase + ic * kvol;
                        for dt in t0..t1 {
                            let it = (tor + dt as isize) as usize;
                            for dy in y0..y1 {
                                let iy = (yor + dy as isize) as usize;
                                let xrow = xb + it * plane + iy * d.w;
                                let wrow = wb + (dt * kh + dy) * kw;
                                for dx in x0..x1 {
                                    let ix = (xor + dx as isize) as usize;
                                    acc += xd[xrow + ix] * wdat[wrow + dx];
                                }
                            }
                        }
                    }
                    out[((oc * ot + zt) * oh + zy) * ow + zx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![d.o, ot, oh, ow], out)
}

fn conv3d_backward(x: &Tensor, w: &Tensor, g: &Tensor, geom: ConvGeom) -> (Tensor, Tensor, Tensor) {
    let d = conv_dims(x, w, geom).expect("validated in forward");
    let [kt, kh, kw] = d.k;
    let [ot, oh, ow] = d.out;
    let xd = x.data();
    let wdat = w.data();
    let gd = g.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; d.o];
    let plane = d.h * d.w;
    let vol = d.t * plane;
    let kvol = kt * kh * kw;
    for oc in 0..d.o {
        let wbase = oc * d.c * kvol;
        for zt in 0..ot {
            let (t0, t1, tor) = kernel_span(zt, geom.stride[0], geom.pad[0], kt, d.t);
            for zy in 0..oh {
                let (y0, y1, yor) = kernel_span(zy, geom.stride[1], geom.pad[1], kh, d.h);
                for zx in 0..ow {
                    let (x0, x1, xor) = kernel_span(zx, geom.stride[2], geom.pad[2], kw, d.w);
                    let gv = gd[((oc * ot + zt) * oh + zy) * ow + zx];
                    gb[oc] += gv;
                    if gv == 0.0 {
                        continue;
                    }
                    for ic in 0..d.c {
                        let xb = ic * vol;
                        let wb = wbase + ic * kvol;
                        for dt in t0..t1 {
                            let it = (tor + dt as isize) as usize;
                            for dy in y0..y1 {
                                let iy = (yor + dy as isize) as usize;
                                let xrow = xb + it * plane + iy * d.w;
                                let wrow = wb + (dt * kh + dy) * kw;
                                for dx in x0..x1 {
                                    let ix = (xor + dx as isize) as usize;
                                    gx[xrow + ix] += gv * wdat[wrow + dx];
                                    gw[wrow + dx] += gv * xd[xrow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("input shape"),
        Tensor::new(w.shape().to_vec(), gw).expect("weight shape"),
        Tensor::new(vec![d.o], gb).expect("bias shape"),
    )
}

/// Cell boundaries for adaptive average pooling over the trailing one to three axes.
struct PoolPlan {
    channels: usize,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    cells: [Vec<(usize, usize)>; 3],
}

impl PoolPlan {
    fn new(in_shape: &[usize], grid: &[usize]) -> Self {
        let lead = 3 - grid.len();
        let mut in_dims = [1; 3];
        let mut out_dims = [1; 3];
        for (i, (&n, &g)) in in_shape[1..].iter().zip(grid).enumerate() {
            in_dims[lead + i] = n;
            out_dims[lead + i] = g;
        }
        let cells = [0, 1, 2].map(|axis| {
            let (n, m) = (in_dims[axis], out_dims[axis]);
            (0..m)
                .map(|i| ((i * n) / m, ((i + 1) * n).div_ceil(m)))
                .collect::<Vec<_>>()
        });
        let mut out_shape = vec![in_shape[0]];
        out_shape.extend_from_slice(grid);
        Self {
            channels: in_shape[0],
            in_shape: in_shape.to_vec(),
            out_shape,
            in_dims,
            out_dims,
            cells,
        }
    }

    /// Calls `f(out_index, in_index, 1 / cell_size)` for every input element of every cell.
    fn visit(&self, mut f: impl FnMut(usize, usize, f64)) {
        let [_, n2, n3] = self.in_dims;
        let [m1, m2, m3] = self.out_dims;
        let n1 = self.in_dims[0];
        for c in 0..self.channels {
            for a in 0..m1 {
                let (a0, a1) = self.cells[0][a];
                for b in 0..m2 {
                    let (b0, b1) = self.cells[1][b];
                    for e in 0..m3 {
                        let (e0, e1) = self.cells[2][e];
                        let weight = 1.0 / ((a1 - a0) * (b1 - b0) * (e1 - e0)) as f64;
                        let out_idx = ((c * m1 + a) * m2 + b) * m3 + e;
                        for i in a0..a1 {
                            for j in b0..b1 {
                                let row = ((c * n1 + i) * n2 + j) * n3;
                                for k in e0..e1 {
                                    f(out_idx, row + k, weight);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let xd = x.data();
        let mut out = vec![0.0; self.out_shape.iter().product()];
        self.visit(|o, i, w| out[o] += xd[i] * w);
        Tensor::new(self.out_shape.clone(), out).expect("pool output shape")
    }

    fn backward(&self, g: &Tensor) -> Tensor {
        let gd = g.data();
        let mut out = vec![0.0; self.in_shape.iter().product()];
        self.visit(|o, i, w| out[i] += gd[o] * w);
        Tensor::new(self.in_shape.clone(), out).expect("pool input shape")
    }
}
