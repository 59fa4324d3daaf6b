//! Dynamic reverse-mode differentiation tape.
//!
//! Every forward pass records its operations on a fresh [`Tape`]. Values are
//! whole tensors, so a model forward is a few hundred nodes rather than one
//! node per scalar. [`Tape::backward`] walks the tape in reverse and adds the
//! resulting adjoints into the `grad` of every leaf created with
//! [`Tape::param`]. Intermediate adjoints live only for the duration of one
//! backward call, which is what makes repeated calls accumulate additively.

use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a[m,n] + b[m]` broadcast across columns.
    AddCol(Var, Var),
    /// `a[m,n] * b[m]` broadcast across columns.
    MulCol(Var, Var),
    /// `a[m,n] + b[n]` broadcast across rows.
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    LayerNorm(Var, usize, f64),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    SumAll(Var),
    SumAxis(Var, usize),
    GatherCols(Var, Vec<usize>),
    /// Softmax over consecutive column segments of the given lengths.
    SegmentSoftmax(Var, Vec<usize>),
    /// Sums consecutive column segments into one column each.
    SegmentSum(Var, Vec<usize>),
    StridedConv { x: Var, w: Var, b: Var, stride: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf. Its gradient starts at zero.
    pub fn param(&mut self, value: Tensor) -> Var {
        let grad = Some(Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a parameter leaf, `None` for constants.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddCol(a, b)
            | Op::MulCol(a, b)
            | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Clamp(a, ..)
            | Op::Softmax(a, _)
            | Op::LayerNorm(a, ..)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Slice(a, ..)
            | Op::SumAll(a)
            | Op::SumAxis(a, _)
            | Op::GatherCols(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::SegmentSum(a, _) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
            Op::StridedConv { x, w, b, .. } => vec![*x, *w, *b],
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    fn col_operand(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (m, n) = self.value(a).dims2(op)?;
        if self.value(b).len() != m {
            return Err(shape_err(op, self.value(a), self.value(b)));
        }
        Ok((m, n))
    }

    pub fn add_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.col_operand("add_col", a, b)?;
        let mut v = self.value(a).clone();
        let bias = self.value(b).data();
        for i in 0..m {
            for x in &mut v.data_mut()[i * n..(i + 1) * n] {
                *x += bias[i];
            }
        }
        Ok(self.push(v, Op::AddCol(a, b)))
    }

    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.col_operand("mul_col", a, b)?;
        let mut v = self.value(a).clone();
        let s = self.value(b).data();
        for i in 0..m {
            for x in &mut v.data_mut()[i * n..(i + 1) * n] {
                *x *= s[i];
            }
        }
        Ok(self.push(v, Op::MulCol(a, b)))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_row")?;
        if self.value(b).len() != n {
            return Err(shape_err("add_row", self.value(a), self.value(b)));
        }
        let mut v = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for i in 0..m {
            for (x, bj) in v.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&bias) {
                *x += bj;
            }
        }
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).softmax(axis)?;
        Ok(self.push(v, Op::Softmax(a, axis)))
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance
    /// (population variance, `eps` added before the square root). No affine.
    pub fn layer_norm(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = x.axis_split("layer_norm", axis)?;
        let mut out = x.clone();
        let data = x.data();
        let out_data = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let mean = (0..len).map(|k| data[idx(k)]).sum::<f64>() / len as f64;
                let var = (0..len).map(|k| (data[idx(k)] - mean).powi(2)).sum::<f64>() / len as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for k in 0..len {
                    out_data[idx(k)] = (data[idx(k)] - mean) * inv;
                }
            }
        }
        Ok(self.push(out, Op::LayerNorm(a, axis, eps)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(parts[0]).clone();
        let (_, _, inner) = first.axis_split("concat", axis)?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &p in parts {
            let t = self.value(p);
            let compatible = t.rank() == first.rank()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &first, t));
            }
            shape[axis] += t.shape()[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis)))
    }

    /// Keeps `start..start + len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, extent, inner) = x.axis_split("slice", axis)?;
        if len == 0 || start + len > extent {
            return Err(TensorError::Range {
                op: "slice",
                start,
                end: start + len,
                extent,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(v, Op::Slice(a, axis, start)))
    }

    /// Leading `len` entries along `axis`; returns `a` itself when nothing is cut.
    pub fn narrow(&mut self, a: Var, axis: usize, len: usize) -> Result<Var> {
        if self.value(a).shape().get(axis) == Some(&len) {
            return Ok(a);
        }
        self.slice(a, axis, 0, len)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).sum_axis(axis)?;
        Ok(self.push(v, Op::SumAxis(a, axis)))
    }

    /// Output column `k` is input column `index[k]` of a matrix.
    pub fn gather_cols(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2("gather_cols")?;
        if let Some(&bad) = index.iter().find(|&&j| j >= n) {
            return Err(TensorError::Range {
                op: "gather_cols",
                start: bad,
                end: bad + 1,
                extent: n,
            });
        }
        let w = index.len();
        let mut data = vec![0.0; m * w];
        for i in 0..m {
            let row = x.row(i);
            for (k, &j) in index.iter().enumerate() {
                data[i * w + k] = row[j];
            }
        }
        let v = Tensor::new(&[m, w], data)?;
        Ok(self.push(v, Op::GatherCols(a, index)))
    }

    /// Independent 1D convolution of each row of `x[n, width]` with its own
    /// kernel row `w[n, k]` and bias `b[n]`, no padding.
    /// Output width is `(width - k) / stride + 1`.
    fn check_segments(&self, op: &'static str, a: Var, lens: &[usize]) -> Result<(usize, usize)> {
        let (m, n) = self.value(a).dims2(op)?;
        let total: usize = lens.iter().sum();
        if total != n || lens.contains(&0) {
            return Err(TensorError::Shape { op, lhs: vec![m, n], rhs: lens.to_vec() });
        }
        Ok((m, n))
    }

    /// Row-wise softmax within each run of `lens[s]` consecutive columns.
    pub fn segment_softmax(&mut self, a: Var, lens: Vec<usize>) -> Result<Var> {
        let (m, n) = self.check_segments("segment_softmax", a, &lens)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let mut start = i * n;
            for &len in &lens {
                let seg = &x[start..start + len];
                let top = seg.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                let dst = &mut out[start..start + len];
                let mut z = 0.0;
                for (o, &v) in dst.iter_mut().zip(seg) {
                    *o = (v - top).exp();
                    z += *o;
                }
                dst.iter_mut().for_each(|o| *o /= z);
                start += len;
            }
        }
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::SegmentSoftmax(a, lens)))
    }

    /// `[m, n] -> [m, lens.len()]`, summing each run of consecutive columns.
    pub fn segment_sum(&mut self, a: Var, lens: Vec<usize>) -> Result<Var> {
        let (m, n) = self.check_segments("segment_sum", a, &lens)?;
        let x = self.value(a).data();
        let k = lens.len();
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            let mut start = i * n;
            for (s, &len) in lens.iter().enumerate() {
                out[i * k + s] = x[start..start + len].iter().sum();
                start += len;
            }
        }
        let v = Tensor::new(&[m, k], out)?;
        Ok(self.push(v, Op::SegmentSum(a, lens)))
    }

    pub fn strided_conv(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, width) = xv.dims2("strided_conv")?;
        let (wn, k) = self.value(w).dims2("strided_conv")?;
        if wn != n || self.value(b).len() != n {
            return Err(shape_err("strided_conv", xv, self.value(w)));
        }
        if width < k {
            return Err(TensorError::Range {
                op: "strided_conv",
                start: 0,
                end: k,
                extent: width,
            });
        }
        let out_w = (width - k) / stride + 1;
        let (wv, bv) = (self.value(w).data(), self.value(b).data());
        let mut data = vec![0.0; n * out_w];
        for row in 0..n {
            let xr = xv.row(row);
            let kr = &wv[row * k..(row + 1) * k];
            for t in 0..out_w {
                let window = &xr[t * stride..t * stride + k];
                data[row * out_w + t] =
                    window.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() + bv[row];
            }
        }
        let v = Tensor::new(&[n, out_w], data)?;
        Ok(self.push(v, Op::StridedConv { x, w, b, stride }))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Propagates d`loss`/d(leaf) into every parameter leaf's `grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: lv.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::ones(lv.shape()));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(acc) = self.nodes[id].grad.as_mut() {
                    acc.add_assign(&g);
                }
                continue;
            }
            for (parent, contribution) in self.local_grads(id, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match adj[parent.0].as_mut() {
                    Some(acc) => acc.add_assign(&contribution),
                    None => adj[parent.0] = Some(contribution),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, id: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[id];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if wants(a) {
                    res.push((*a, g.matmul_nt(val(b))?));
                }
                if wants(b) {
                    res.push((*b, val(a).matmul_tn(g)?));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(b), "mul", |g, y| g * y)?),
                (*b, g.zip_map(val(a), "mul", |g, x| g * x)?),
            ],
            Op::Scale(a, c) => vec![(*a, g.map(|x| x * c))],
            Op::AddCol(a, b) => {
                let (m, _) = g.dims2("add_col")?;
                let sums: Vec<f64> = (0..m).map(|i| g.row(i).iter().sum()).collect();
                let gb = Tensor::new(val(b).shape(), sums)?;
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::MulCol(a, b) => {
                let (m, n) = g.dims2("mul_col")?;
                let (av, bv) = (val(a), val(b).data());
                let mut ga = g.clone();
                let mut gb = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g.at2(i, j);
                        ga.set2(i, j, gij * bv[i]);
                        gb[i] += gij * av.at2(i, j);
                    }
                }
                vec![(*a, ga), (*b, Tensor::new(val(b).shape(), gb)?)]
            }
            Op::AddRow(a, b) => {
                let gb = g.sum_axis(0)?.reshape(val(b).shape())?;
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Relu(a) => vec![(*a, g.zip_map(val(a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?)],
            Op::Tanh(a) => vec![(*a, g.zip_map(y, "tanh", |g, y| g * (1.0 - y * y))?)],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(y, "sigmoid", |g, y| g * y * (1.0 - y))?)],
            Op::Log(a) => vec![(*a, g.zip_map(val(a), "log", |g, x| g / x)?)],
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                vec![(
                    *a,
                    g.zip_map(val(a), "clamp", |g, x| if x >= lo && x <= hi { g } else { 0.0 })?,
                )]
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = y.axis_split("softmax", *axis)?;
                let mut gx = vec![0.0; y.len()];
                let (yd, gd) = (y.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                        for k in 0..len {
                            gx[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                vec![(*a, Tensor::new(y.shape(), gx)?)]
            }
            Op::LayerNorm(a, axis, eps) => {
                let x = val(a);
                let (outer, len, inner) = x.axis_split("layer_norm", *axis)?;
                let mut gx = vec![0.0; x.len()];
                let (xd, yd, gd) = (x.data(), y.data(), g.data());
                let nf = len as f64;
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let mean = (0..len).map(|k| xd[idx(k)]).sum::<f64>() / nf;
                        let var = (0..len).map(|k| (xd[idx(k)] - mean).powi(2)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean = (0..len).map(|k| gd[idx(k)]).sum::<f64>() / nf;
                        let gy_mean = (0..len).map(|k| gd[idx(k)] * yd[idx(k)]).sum::<f64>() / nf;
                        for k in 0..len {
                            gx[idx(k)] = inv * (gd[idx(k)] - g_mean - yd[idx(k)] * gy_mean);
                        }
                    }
                }
                vec![(*a, Tensor::new(x.shape(), gx)?)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose()?)],
            Op::Reshape(a) => vec![(*a, g.reshape(val(a).shape())?)],
            Op::Concat(parts, axis) => {
                let (outer, _, inner) = g.axis_split("concat", *axis)?;
                let total = g.shape()[*axis];
                let mut res = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for p in parts {
                    let ext = val(p).shape()[*axis];
                    let mut data = Vec::with_capacity(val(p).len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + ext * inner]);
                    }
                    offset += ext;
                    res.push((*p, Tensor::new(val(p).shape(), data)?));
                }
                res
            }
            Op::Slice(a, axis, start) => {
                let x = val(a);
                let (outer, extent, inner) = x.axis_split("slice", *axis)?;
                let len = g.shape()[*axis];
                let mut gx = Tensor::zeros(x.shape());
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    gx.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![(*a, gx)]
            }
            Op::SumAll(a) => vec![(*a, Tensor::full(val(a).shape(), g.data()[0]))],
            Op::SumAxis(a, axis) => {
                let x = val(a);
                let (outer, len, inner) = x.axis_split("sum_axis", *axis)?;
                let mut gx = vec![0.0; x.len()];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            gx[(o * len + k) * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                vec![(*a, Tensor::new(x.shape(), gx)?)]
            }
            Op::GatherCols(a, index) => {
                let x = val(a);
                let (m, n) = x.dims2("gather_cols")?;
                let w = index.len();
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for (k, &j) in index.iter().enumerate() {
                        gx[i * n + j] += g.data()[i * w + k];
                    }
                }
                vec![(*a, Tensor::new(x.shape(), gx)?)]
            }
            Op::SegmentSoftmax(a, lens) => {
                let (m, n) = y.dims2("segment_softmax")?;
                let (yd, gd) = (y.data(), g.data());
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    let mut start = i * n;
                    for &len in lens {
                        let r = start..start + len;
                        let dot: f64 = yd[r.clone()].iter().zip(&gd[r.clone()]).map(|(y, g)| y * g).sum();
                        for c in r {
                            gx[c] = yd[c] * (gd[c] - dot);
                        }
                        start += len;
                    }
                }
                vec![(*a, Tensor::new(&[m, n], gx)?)]
            }
            Op::SegmentSum(a, lens) => {
                let (m, n) = val(a).dims2("segment_sum")?;
                let k = lens.len();
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    let mut start = i * n;
                    for (s, &len) in lens.iter().enumerate() {
                        gx[start..start + len].fill(g.data()[i * k + s]);
                        start += len;
                    }
                }
                vec![(*a, Tensor::new(&[m, n], gx)?)]
            }
            Op::StridedConv { x, w, b, stride } => {
                let (xv, wv) = (val(x), val(w));
                let (n, width) = xv.dims2("strided_conv")?;
                let (_, k) = wv.dims2("strided_conv")?;
                let (_, out_w) = g.dims2("strided_conv")?;
                let mut gx = vec![0.0; n * width];
                let mut gw = vec![0.0; n * k];
                let mut gb = vec![0.0; n];
                for row in 0..n {
                    for t in 0..out_w {
                        let gt = g.at2(row, t);
                        gb[row] += gt;
                        for q in 0..k {
                            let col = t * stride + q;
                            gx[row * width + col] += gt * wv.at2(row, q);
                            gw[row * k + q] += gt * xv.at2(row, col);
                        }
                    }
                }
                vec![
                    (*x, Tensor::new(xv.shape(), gx)?),
                    (*w, Tensor::new(wv.shape(), gw)?),
                    (*b, Tensor::new(val(b).shape(), gb)?),
                ]
            }
        };
        Ok(out)
    }
}
