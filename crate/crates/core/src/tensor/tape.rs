use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LogSoftmax { x: Var, outer: usize, len: usize, inner: usize },
    Concat { parts: Vec<Var>, outer: usize, widths: Vec<usize>, inner: usize },
    Slice { x: Var, outer: usize, len: usize, inner: usize, start: usize, count: usize },
    GatherRows { table: Var, index: Vec<usize> },
    Sum(Var),
    MeanRows(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Pick(Var, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations run, so every node's inputs sit at
/// smaller indices; [`Tape::backward`] walks the indices once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn axis_split(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis { op, axis, shape: shape.to_vec() });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Shape { op, lhs: other.to_vec(), rhs: vec![] }),
    }
}

/// `a (m×k) · b (k×n)`.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `g (m×n) · bᵀ` where `b` is `k×n`; result `m×k`.
fn mm_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = gi.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `m×k` and `g` is `m×n`; result `k×n`.
fn mm_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(gi) {
                *o += aip * gv;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad: true, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad: false, op: Op::Leaf });
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

    /// Gradient accumulated by the last [`Tape::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor { shape: node.value.shape().to_vec(), data: g.clone() })
    }

    /// Copies the value of `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::Transpose(a), &[a]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor { shape: ta.shape().to_vec(), data }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor { shape: ta.shape().to_vec(), data: ta.data().iter().map(|&x| f(x)).collect() }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast_check(&self, op: &'static str, a: Var, row: Var) -> Result<(usize, usize)> {
        let (m, n) = matrix_dims(self.value(a), op)?;
        if self.shape(row) != [1, n] {
            return Err(Error::Shape { op, lhs: self.shape(a).to_vec(), rhs: self.shape(row).to_vec() });
        }
        Ok((m, n))
    }

    /// `a (m×n) + row (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast_check("add_row", a, row)?;
        let r = self.value(row).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &x)| x + r[i % n]).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), data };
        Ok(self.push(t, Op::AddRow(a, row), &[a, row]))
    }

    /// `a (m×n) ⊙ row (1×n)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast_check("mul_row", a, row)?;
        let r = self.value(row).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &x)| x * r[i % n]).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), data };
        Ok(self.push(t, Op::MulRow(a, row), &[a, row]))
    }

    /// `a (m×n) ⊙ col (m×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "mul_col")?;
        if self.shape(col) != [m, 1] {
            return Err(Error::Shape { op: "mul_col", lhs: self.shape(a).to_vec(), rhs: self.shape(col).to_vec() });
        }
        let c = self.value(col).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &x)| x * c[i / n]).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), data };
        Ok(self.push(t, Op::MulCol(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    /// Elementwise `max(x, 0)`; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    /// Softmax along `axis`, with the per-slice maximum subtracted first.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.shape(x), axis, "softmax")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    data[idx(k)] /= total;
                }
            }
        }
        let t = Tensor { shape: self.shape(x).to_vec(), data };
        Ok(self.push(t, Op::Softmax { x, outer, len, inner }, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.shape(x), axis, "log_softmax")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|k| (src[idx(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..len {
                    data[idx(k)] = src[idx(k)] - lse;
                }
            }
        }
        let t = Tensor { shape: self.shape(x).to_vec(), data };
        Ok(self.push(t, Op::LogSoftmax { x, outer, len, inner }, &[x]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of an empty list".into()))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = axis_split(&base, axis, "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape { op: "concat", lhs: base.clone(), rhs: s.to_vec() });
            }
            widths.push(s[axis]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor { shape, data };
        Ok(self.push(t, Op::Concat { parts: parts.to_vec(), outer, widths, inner }, parts))
    }

    /// Takes `count` consecutive entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, count: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis, "slice")?;
        if count == 0 || start + count > len {
            return Err(Error::Shape { op: "slice", lhs: shape, rhs: vec![start, count] });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * len + start) * inner..(o * len + start + count) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = count;
        let t = Tensor { shape: out_shape, data };
        Ok(self.push(t, Op::Slice { x, outer, len, inner, start, count }, &[x]))
    }

    /// Row lookup: output row `i` is `table[index[i]]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(table), "gather_rows")?;
        if index.is_empty() || index.iter().any(|&i| i >= m) {
            return Err(Error::Shape { op: "gather_rows", lhs: vec![m, n], rhs: index.to_vec() });
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let t = Tensor { shape: vec![index.len(), n], data };
        Ok(self.push(t, Op::GatherRows { table, index: index.to_vec() }, &[table]))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Column means of an `m × n` matrix, as `1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "mean_rows")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (d, &s) in data.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *d += s;
            }
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        Ok(self.push(Tensor { shape: vec![1, n], data }, Op::MeanRows(a), &[a]))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(x), "layer_norm")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (d, &v) in data[i * n..(i + 1) * n].iter_mut().zip(row) {
                *d = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, Op::LayerNorm { x, inv_std }, &[x]))
    }

    /// Scalar entry at a flat index, as `1 × 1`.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let len = self.value(x).len();
        if index >= len {
            return Err(Error::Shape { op: "pick", lhs: self.shape(x).to_vec(), rhs: vec![index] });
        }
        let v = self.value(x).data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick(x, index), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Gradients accumulate into every tracked ancestor; a tensor used more
    /// than once receives the sum of its contributions. Calling `backward`
    /// again clears the previous gradients first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else { continue };
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let contributions: Vec<(Var, Vec<f64>)> = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let mut c = Vec::new();
                if self.requires_grad(*a) {
                    c.push((*a, mm_a_bt(g, self.value(*b).data(), m, n, k)));
                }
                if self.requires_grad(*b) {
                    c.push((*b, mm_at_b(self.value(*a).data(), g, m, k, n)));
                }
                c
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = g[j * m + i];
                    }
                }
                vec![(*a, d)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, g.iter().zip(vb).map(|(x, y)| x * y).collect()),
                    (*b, g.iter().zip(va).map(|(x, y)| x * y).collect()),
                ]
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).len();
                let mut dr = vec![0.0; n];
                for (i, &x) in g.iter().enumerate() {
                    dr[i % n] += x;
                }
                vec![(*a, g.to_vec()), (*row, dr)]
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row).data();
                let va = self.value(*a).data();
                let n = r.len();
                let mut dr = vec![0.0; n];
                let mut da = vec![0.0; g.len()];
                for (i, &x) in g.iter().enumerate() {
                    da[i] = x * r[i % n];
                    dr[i % n] += x * va[i];
                }
                vec![(*a, da), (*row, dr)]
            }
            Op::MulCol(a, col) => {
                let c = self.value(*col).data();
                let va = self.value(*a).data();
                let n = self.value(*a).cols();
                let mut dc = vec![0.0; c.len()];
                let mut da = vec![0.0; g.len()];
                for (i, &x) in g.iter().enumerate() {
                    da[i] = x * c[i / n];
                    dc[i / n] += x * va[i];
                }
                vec![(*a, da), (*col, dc)]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|x| x * s).collect())],
            Op::Relu(a) => {
                let va = self.value(*a).data();
                vec![(*a, g.iter().zip(va).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }).collect())]
            }
            Op::Sigmoid(a) => vec![(*a, g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect())],
            Op::Tanh(a) => vec![(*a, g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect())],
            Op::Softmax { x, outer, len, inner } => {
                let mut d = vec![0.0; g.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..*len).map(|k| g[idx(k)] * out[idx(k)]).sum();
                        for k in 0..*len {
                            d[idx(k)] = out[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::LogSoftmax { x, outer, len, inner } => {
                let mut d = vec![0.0; g.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let total: f64 = (0..*len).map(|k| g[idx(k)]).sum();
                        for k in 0..*len {
                            d[idx(k)] = g[idx(k)] - out[idx(k)].exp() * total;
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::Concat { parts, outer, widths, inner } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                let mut c = Vec::with_capacity(parts.len());
                for (&p, &w) in parts.iter().zip(widths) {
                    let mut d = Vec::with_capacity(outer * w * inner);
                    for o in 0..*outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g[base..base + w * inner]);
                    }
                    offset += w;
                    c.push((p, d));
                }
                c
            }
            Op::Slice { x, outer, len, inner, start, count } => {
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    let dst = (o * len + start) * inner;
                    let src = o * count * inner;
                    d[dst..dst + count * inner].copy_from_slice(&g[src..src + count * inner]);
                }
                vec![(*x, d)]
            }
            Op::GatherRows { table, index } => {
                let t = self.value(*table);
                let n = t.cols();
                let mut d = vec![0.0; t.len()];
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..n {
                        d[i * n + j] += g[r * n + j];
                    }
                }
                vec![(*table, d)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::MeanRows(a) => {
                let m = self.value(*a).rows();
                let n = g.len();
                let d = (0..m * n).map(|i| g[i % n] / m as f64).collect();
                vec![(*a, d)]
            }
            Op::LayerNorm { x, inv_std } => {
                let n = self.value(*x).cols();
                let mut d = vec![0.0; g.len()];
                for (i, inv) in inv_std.iter().enumerate() {
                    let gy = &g[i * n..(i + 1) * n];
                    let y = &out[i * n..(i + 1) * n];
                    let mean_g = gy.iter().sum::<f64>() / n as f64;
                    let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        d[i * n + j] = inv * (gy[j] - mean_g - y[j] * mean_gy);
                    }
                }
                vec![(*x, d)]
            }
            Op::Pick(x, index) => {
                let mut d = vec![0.0; self.value(*x).len()];
                d[*index] = g[0];
                vec![(*x, d)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
        };
        for (v, d) in contributions {
            self.accumulate(v, d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(2));
        let b = t.constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = t.matmul(i, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = t.constant(Tensor::row(&[1.0, 2.0]));
        let b = t.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_symmetry_and_large_logits() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.0, 0.0]));
        let y = t.softmax(x, 1).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);

        let x = t.constant(Tensor::row(&[1000.0, 1000.0, 1000.0]));
        let y = t.softmax(x, 1).unwrap();
        for &p in t.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_invalid_axis() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.0, 0.0]));
        assert!(matches!(t.softmax(x, 2), Err(Error::Axis { .. })));
    }

    #[test]
    fn relu_values_and_dead_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[-1.0, -3.0]));
        let y = t.relu(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn concat_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 5]));
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.shape(c), &[2, 8]);
        let one = t.concat(&[a], 1).unwrap();
        assert_eq!(t.value(one), t.value(a));
        let bad = t.constant(Tensor::zeros(&[3, 5]));
        assert!(t.concat(&[a, bad], 1).is_err());
    }

    #[test]
    fn identity_and_square_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        t.backward(x).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0]);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, -2.0, 0.5]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]));
        let c = t.constant(Tensor::row(&[3.0, 4.0]));
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(x).unwrap().data(), &[3.0, 4.0]);
    }
}
