use super::kernels;
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Concat(Var, Var, usize),
    SumAll(Var),
    SumAxis(Var, usize),
    LayerNorm(Var, Vec<f64>),
    Row(Var, usize),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    Select(Var, usize),
    Slab(Var, usize),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only operation tape.
///
/// Nodes are stored in execution order, so every node's parents precede it
/// and the reverse of the tape is a valid topological order for backward.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(TensorError::Axis {
            op,
            axis,
            rank: t.rank(),
        });
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf, honoring the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable leaf (copy of `t`).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone().with_requires_grad(true))
    }

    /// Registers a non-trainable input (copy of `t`).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone().with_requires_grad(false))
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

    /// Gradient assigned to a leaf by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, node, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let ta = self.val(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(out, node, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    /// Multiplies every entry of `a` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.val(s);
        if ts.len() != 1 {
            return Err(shape_err("mul_scalar", self.val(a), ts));
        }
        let c = ts.data()[0];
        let ta = self.val(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| c * x).collect())?;
        Ok(self.push(out, Op::MulScalar(a, s), &[a, s]))
    }

    /// `a + b` with `b` (shape `[c]` or `[1, c]`) broadcast over the rows of `a: r×c`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (r, c) = ta.dims2()?;
        let ok = matches!(tb.shape(), [n] if *n == c) || matches!(tb.shape(), [1, n] if *n == c);
        if !ok {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for i in 0..r {
            for (o, bv) in data[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        Ok(self.push(out, Op::AddRow(a, b), &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul(self.val(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · w + b` for `x: r×i`, `w: i×o`, `b: [o]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    /// Natural log; domain is `x > 0`.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.val(a);
        check_axis("softmax", ta, axis)?;
        let out = Tensor::new(ta.shape().to_vec(), kernels::softmax(ta.data(), ta.shape(), axis))?;
        Ok(self.push(out, Op::Softmax(a, axis), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.val(a);
        check_axis("log_softmax", ta, axis)?;
        let data = kernels::log_softmax(ta.data(), ta.shape(), axis);
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LogSoftmax(a, axis), &[a]))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        // an empty rank-1 operand is the identity
        if tb.is_empty() && tb.rank() == 1 && !ta.is_empty() {
            let out = ta.clone().with_requires_grad(false);
            return Ok(self.push(out, Op::Concat(a, b, axis), &[a, b]));
        }
        if ta.is_empty() && ta.rank() == 1 && !tb.is_empty() {
            let out = tb.clone().with_requires_grad(false);
            return Ok(self.push(out, Op::Concat(a, b, axis), &[a, b]));
        }
        check_axis("concat", ta, axis)?;
        let mismatch = ta.rank() != tb.rank()
            || ta
                .shape()
                .iter()
                .zip(tb.shape())
                .enumerate()
                .any(|(i, (x, y))| i != axis && x != y);
        if mismatch {
            return Err(shape_err("concat", ta, tb));
        }
        let (outer, la, inner) = kernels::lanes(ta.shape(), axis);
        let lb = tb.shape()[axis];
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for o in 0..outer {
            data.extend_from_slice(&ta.data()[o * la * inner..(o + 1) * la * inner]);
            data.extend_from_slice(&tb.data()[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = la + lb;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(a, b, axis), &[a, b]))
    }

    /// Sum of all entries, as a shape-`[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    /// Sum along `axis`, keeping that axis with extent 1.
    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.val(a);
        check_axis("reduce_sum", ta, axis)?;
        let mut shape = ta.shape().to_vec();
        shape[axis] = 1;
        let (outer, len, inner) = kernels::lanes(ta.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                data[o * inner + i] = (0..len).map(|t| ta.data()[o * len * inner + t * inner + i]).sum();
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::SumAxis(a, axis), &[a]))
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// (population) variance; no learned gain or bias.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ta = self.val(a);
        if ta.rank() == 0 {
            return Err(TensorError::Rank {
                op: "layer_norm",
                expected: 1,
                shape: ta.shape().to_vec(),
            });
        }
        let width = *ta.shape().last().expect("rank >= 1");
        let rows = if width == 0 { 0 } else { ta.len() / width };
        let mut data = vec![0.0; ta.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = &ta.data()[r * width..(r + 1) * width];
            let mean = x.iter().sum::<f64>() / width as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in data[r * width..(r + 1) * width].iter_mut().zip(x) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LayerNorm(a, inv_std), &[a]))
    }

    /// Row `i` of a matrix as a `1 × c` tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let ta = self.val(a);
        let (r, c) = ta.dims2()?;
        if i >= r {
            return Err(TensorError::Index {
                op: "row",
                index: i,
                extent: r,
            });
        }
        let out = Tensor::new(vec![1, c], ta.data()[i * c..(i + 1) * c].to_vec())?;
        Ok(self.push(out, Op::Row(a, i), &[a]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.val(a);
        let (r, c) = ta.dims2()?;
        if start + len > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                extent: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    /// Stacks vectors (each `[c]` or `[1, c]`) into an `n × c` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().ok_or(TensorError::Rank {
            op: "stack_rows",
            expected: 1,
            shape: vec![],
        })?;
        let c = self.val(*first).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in rows {
            let t = self.val(*r);
            if t.len() != c || t.rank() > 2 || (t.rank() == 2 && t.shape()[0] != 1) {
                return Err(shape_err("stack_rows", self.val(*first), t));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(out, Op::StackRows(rows.to_vec()), rows))
    }

    /// Entry `index` of the flattened tensor, as shape `[1]`.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let ta = self.val(a);
        if index >= ta.len() {
            return Err(TensorError::Index {
                op: "select",
                index,
                extent: ta.len(),
            });
        }
        let out = Tensor::scalar(ta.data()[index]);
        Ok(self.push(out, Op::Select(a, index), &[a]))
    }

    /// Sub-tensor at `index` along the first axis.
    pub fn slab(&mut self, a: Var, index: usize) -> Result<Var> {
        let out = self.val(a).slab(index)?;
        Ok(self.push(out, Op::Slab(a, index), &[a]))
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(a).clone().with_requires_grad(false).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// Assigns `∂loss/∂leaf` to every leaf that requires grad (zeros when the
    /// leaf does not influence the loss) and drops intermediate gradients.
    /// The graph cannot be differentiated a second time.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let lt = self.val(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::DetachedLoss);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(dy);
                continue;
            }
            self.propagate(idx, &dy, &mut grads);
        }

        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let len_of = |v: &Var| self.nodes[v.0].value.len();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        accumulate(&mut grads[v.0], len_of(v), |g| {
                            g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], len_of(a), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                    });
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], len_of(b), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.val(*a).data(), self.val(*b).data());
                if needs(a) {
                    accumulate(&mut grads[a.0], xa.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * xb[i];
                        }
                    });
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], xb.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * xa[i];
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], len_of(a), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d)
                    });
                }
            }
            Op::MulScalar(a, s) => {
                let xa = self.val(*a).data();
                let c = self.val(*s).data()[0];
                if needs(a) {
                    accumulate(&mut grads[a.0], xa.len(), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d)
                    });
                }
                if needs(s) {
                    let ds: f64 = xa.iter().zip(dy).map(|(x, d)| x * d).sum();
                    accumulate(&mut grads[s.0], 1, |g| g[0] += ds);
                }
            }
            Op::AddRow(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], len_of(a), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                    });
                }
                if needs(b) {
                    let c = len_of(b);
                    accumulate(&mut grads[b.0], c, |g| {
                        for (i, d) in dy.iter().enumerate() {
                            g[i % c] += d;
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k) = ta.dims2().expect("checked in forward");
                let n = tb.shape()[1];
                if needs(a) {
                    // dA = dY · Bᵀ
                    let da = kernels::matmul_nt(dy, tb.data(), m, n, k);
                    accumulate(&mut grads[a.0], m * k, |g| {
                        g.iter_mut().zip(&da).for_each(|(g, d)| *g += d)
                    });
                }
                if needs(b) {
                    // dB = Aᵀ · dY
                    let db = kernels::matmul_tn(ta.data(), dy, m, k, n);
                    accumulate(&mut grads[b.0], k * n, |g| {
                        g.iter_mut().zip(&db).for_each(|(g, d)| *g += d)
                    });
                }
            }
            Op::Transpose(a) => {
                if needs(a) {
                    let (r, c) = self.val(*a).dims2().expect("checked in forward");
                    let dt = kernels::transpose(dy, c, r);
                    accumulate(&mut grads[a.0], r * c, |g| {
                        g.iter_mut().zip(&dt).for_each(|(g, d)| *g += d)
                    });
                }
            }
            Op::Tanh(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * (1.0 - y[i] * y[i]);
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * y[i] * (1.0 - y[i]);
                        }
                    });
                }
            }
            Op::Log(a) => {
                if needs(a) {
                    let x = self.val(*a).data();
                    accumulate(&mut grads[a.0], x.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] / x[i];
                        }
                    });
                }
            }
            Op::Exp(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * y[i];
                        }
                    });
                }
            }
            Op::Softmax(a, axis) => {
                if needs(a) {
                    let mut dx = vec![0.0; y.len()];
                    kernels::for_each_lane(node.value.shape(), *axis, |start, stride, len| {
                        let dot: f64 = (0..len).map(|t| dy[start + t * stride] * y[start + t * stride]).sum();
                        for t in 0..len {
                            let i = start + t * stride;
                            dx[i] = y[i] * (dy[i] - dot);
                        }
                    });
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        g.iter_mut().zip(&dx).for_each(|(g, d)| *g += d)
                    });
                }
            }
            Op::LogSoftmax(a, axis) => {
                if needs(a) {
                    let mut dx = vec![0.0; y.len()];
                    kernels::for_each_lane(node.value.shape(), *axis, |start, stride, len| {
                        let total: f64 = (0..len).map(|t| dy[start + t * stride]).sum();
                        for t in 0..len {
                            let i = start + t * stride;
                            dx[i] = dy[i] - y[i].exp() * total;
                        }
                    });
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        g.iter_mut().zip(&dx).for_each(|(g, d)| *g += d)
                    });
                }
            }
            Op::Concat(a, b, axis) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                if tb.is_empty() || ta.is_empty() {
                    let (full, _) = if tb.is_empty() { (a, b) } else { (b, a) };
                    if needs(full) {
                        accumulate(&mut grads[full.0], dy.len(), |g| {
                            g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                        });
                    }
                    return;
                }
                let (outer, la, inner) = kernels::lanes(ta.shape(), *axis);
                let lb = tb.shape()[*axis];
                let (sa, sb) = (la * inner, lb * inner);
                if needs(a) {
                    accumulate(&mut grads[a.0], ta.len(), |g| {
                        for o in 0..outer {
                            for t in 0..sa {
                                g[o * sa + t] += dy[o * (sa + sb) + t];
                            }
                        }
                    });
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], tb.len(), |g| {
                        for o in 0..outer {
                            for t in 0..sb {
                                g[o * sb + t] += dy[o * (sa + sb) + sa + t];
                            }
                        }
                    });
                }
            }
            Op::SumAll(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], len_of(a), |g| g.iter_mut().for_each(|g| *g += dy[0]));
                }
            }
            Op::SumAxis(a, axis) => {
                if needs(a) {
                    let ta = self.val(*a);
                    let (outer, len, inner) = kernels::lanes(ta.shape(), *axis);
                    accumulate(&mut grads[a.0], ta.len(), |g| {
                        for o in 0..outer {
                            for t in 0..len {
                                for i in 0..inner {
                                    g[o * len * inner + t * inner + i] += dy[o * inner + i];
                                }
                            }
                        }
                    });
                }
            }
            Op::LayerNorm(a, inv_std) => {
                if needs(a) {
                    let width = *node.value.shape().last().expect("rank >= 1");
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        for (r, inv) in inv_std.iter().enumerate() {
                            let span = r * width..(r + 1) * width;
                            let (yr, dr) = (&y[span.clone()], &dy[span.clone()]);
                            let mean_d = dr.iter().sum::<f64>() / width as f64;
                            let mean_dy = dr.iter().zip(yr).map(|(d, v)| d * v).sum::<f64>() / width as f64;
                            for (t, gi) in g[span].iter_mut().enumerate() {
                                *gi += inv * (dr[t] - mean_d - yr[t] * mean_dy);
                            }
                        }
                    });
                }
            }
            Op::Row(a, i) => {
                if needs(a) {
                    let c = dy.len();
                    accumulate(&mut grads[a.0], len_of(a), |g| {
                        g[i * c..(i + 1) * c].iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                    });
                }
            }
            Op::SliceCols(a, start) => {
                if needs(a) {
                    let (r, c) = self.val(*a).dims2().expect("checked in forward");
                    let len = node.value.shape()[1];
                    accumulate(&mut grads[a.0], r * c, |g| {
                        for i in 0..r {
                            for t in 0..len {
                                g[i * c + start + t] += dy[i * len + t];
                            }
                        }
                    });
                }
            }
            Op::StackRows(rows) => {
                let c = node.value.shape()[1];
                for (i, v) in rows.iter().enumerate() {
                    if needs(v) {
                        accumulate(&mut grads[v.0], c, |g| {
                            g.iter_mut().zip(&dy[i * c..(i + 1) * c]).for_each(|(g, d)| *g += d)
                        });
                    }
                }
            }
            Op::Select(a, index) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], len_of(a), |g| g[*index] += dy[0]);
                }
            }
            Op::Reshape(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], dy.len(), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                    });
                }
            }
            Op::Slab(a, index) => {
                if needs(a) {
                    let size = dy.len();
                    accumulate(&mut grads[a.0], len_of(a), |g| {
                        g[index * size..(index + 1) * size]
                            .iter_mut()
                            .zip(dy)
                            .for_each(|(g, d)| *g += d)
                    });
                }
            }
        }
    }
}
