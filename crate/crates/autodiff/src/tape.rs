//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append a node holding the output value and enough context to apply the
//! local vector-Jacobian product; [`Tape::backward`] replays the nodes in
//! reverse. A fresh tape is built for every training step.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{broadcast_shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The elementwise operation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Relu(Var),
    Square(Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    ScaleRows(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only leaves keep one across backward passes.
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf for a stored parameter. Repeated calls on one tape return the
    /// same handle, so gradients from every use are summed into one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let i = id.index();
        if i >= self.bound.len() {
            self.bound.resize(i + 1, None);
        }
        if let Some(v) = self.bound[i] {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), store.trainable(id));
        self.bound[i] = Some(v);
        v
    }

    /// Adds the leaf gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (i, var) in self.bound.iter().enumerate() {
            let Some(var) = var else { continue };
            if let Some(g) = &self.nodes[var.0].grad {
                let dst = store.grad_mut(ParamId::from_index(i));
                for (d, s) in dst.data_mut().iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, shaped like its value.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise ---------------------------------------------------

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = matches!(op, Elementwise::Add | Elementwise::Sub | Elementwise::Mul);
        match (need_b, b) {
            (true, Some(b)) => match op {
                Elementwise::Add => self.add(a, b),
                Elementwise::Sub => self.sub(a, b),
                _ => self.mul(a, b),
            },
            (false, None) => Ok(match op {
                Elementwise::Sigmoid => self.sigmoid(a),
                Elementwise::Tanh => self.tanh(a),
                Elementwise::Exp => self.exp(a),
                _ => self.log(a),
            }),
            (true, None) => Err(Error::Invalid(format!("{op:?} needs two operands"))),
            (false, Some(_)) => Err(Error::Invalid(format!("{op:?} takes one operand"))),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| Error::Broadcast {
            op: name,
            a: ta.shape().to_vec(),
            b: tb.shape().to_vec(),
        })?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let (na, nb) = (da.len(), db.len());
        let data: Vec<f64> = if na == n && nb == n {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(da[i % na], db[i % nb])).collect()
        };
        Ok((Tensor::new(&shape, data)?, self.rg(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.nodes[a.0].value.map(f);
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    // ---- linear algebra and reductions ---------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::MatMul {
                a: ta.shape().to_vec(),
                b: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), k, 1, tb.data(), n, 1, &mut out, 1.0, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.sum() / t.numel().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sums over the trailing dimension: `[.., n] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let cols = t.cols();
        let shape = &t.shape()[..t.rank().saturating_sub(1)];
        let data: Vec<f64> = t.data().chunks(cols.max(1)).map(|r| r.iter().sum()).collect();
        let out = Tensor::new(shape, data).expect("sum_last shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::SumLast(a), rg)
    }

    /// Multiplies row `i` of a matrix by the constant `weights[i]`.
    pub fn scale_rows(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.rows() != weights.len() {
            return Err(Error::Shape {
                op: "scale_rows",
                a: t.shape().to_vec(),
                b: vec![weights.len()],
            });
        }
        let cols = t.cols();
        let mut data = t.data().to_vec();
        for (row, w) in data.chunks_mut(cols.max(1)).zip(&weights) {
            row.iter_mut().for_each(|x| *x *= w);
        }
        let out = Tensor::new(t.shape(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::ScaleRows(a, weights), rg))
    }

    // ---- structural ----------------------------------------------------

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let rows = self.nodes[first.0].value.rows();
        let mut total = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    a: self.nodes[first.0].value.shape().to_vec(),
                    b: t.shape().to_vec(),
                });
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(&[rows, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Stacks matrices with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let cols = self.nodes[first.0].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rank() != 2 || t.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    a: self.nodes[first.0].value.shape().to_vec(),
                    b: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(&[rows, cols], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.rank() != 2 || start > end || end > t.cols() {
            return Err(Error::Invalid(format!(
                "slice_cols {start}..{end} out of range for {:?}",
                t.shape()
            )));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(&[rows, end - start], data)?,
            Op::SliceCols(a, start),
            rg,
        ))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.rank() != 2 || start > end || end > t.rows() {
            return Err(Error::Invalid(format!(
                "slice_rows {start}..{end} out of range for {:?}",
                t.shape()
            )));
        }
        let cols = t.cols();
        let data = t.data()[start * cols..end * cols].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(&[end - start, cols], data)?,
            Op::SliceRows(a, start),
            rg,
        ))
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes[a.0].value.clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Row gather from a `[n × d]` table; the backward pass scatter-adds.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.rank() != 2 {
            return Err(Error::Invalid(format!("gather from rank-{} tensor", t.rank())));
        }
        let (n, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::Index { index: id, size: n });
            }
            data.extend_from_slice(t.row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(&[ids.len(), d], data)?,
            Op::Gather(table, ids.to_vec()),
            rg,
        ))
    }

    /// Per-row `−log softmax(logits)[target]` in nats. Rows with a `None`
    /// target are masked out and contribute zero loss and zero gradient.
    ///
    /// `logits` is `[n × V]` (result `[n]`) or `[V]` (result is a scalar).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let t = &self.nodes[logits.0].value;
        let (rows, v) = (t.rows(), t.cols());
        if t.rank() == 0 || t.rank() > 2 || rows != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                a: t.shape().to_vec(),
                b: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0; rows * v];
        let mut out = vec![0.0; rows];
        for (r, target) in targets.iter().enumerate() {
            let Some(target) = *target else { continue };
            if target >= v {
                return Err(Error::Index {
                    index: target,
                    size: v,
                });
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[r * v..(r + 1) * v];
            let mut z = 0.0;
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - max).exp();
                z += *pi;
            }
            p.iter_mut().for_each(|pi| *pi /= z);
            out[r] = max + z.ln() - row[target];
        }
        let shape: &[usize] = if t.rank() == 1 { &[] } else { &[rows] };
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    // ---- reverse pass --------------------------------------------------

    /// Accumulates `∂loss/∂leaf` into every leaf that requires a gradient.
    ///
    /// Interior gradients are recomputed on each call while leaf gradients
    /// add up, so two calls from the same loss double the leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, g, &mut grads, &mut leaf_grads);
        }
        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        i: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        leaf_grads: &mut Vec<(usize, Vec<f64>)>,
    ) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let y = node.value.data();
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:expr) => {
                if let Some($buf) = grad_slot(grads, nodes, $v) {
                    $body
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => leaf_grads.push((i, g)),
            Op::Add(a, b) => {
                with_grad!(*a, |ga| reduce_into(ga, &g, |j| g[j]));
                with_grad!(*b, |gb| reduce_into(gb, &g, |j| g[j]));
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |ga| reduce_into(ga, &g, |j| g[j]));
                with_grad!(*b, |gb| reduce_into(gb, &g, |j| -g[j]));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (na, nb) = (va.len(), vb.len());
                with_grad!(*a, |ga| reduce_into(ga, &g, |j| g[j] * vb[j % nb]));
                with_grad!(*b, |gb| reduce_into(gb, &g, |j| g[j] * va[j % na]));
            }
            Op::Scale(a, c) => with_grad!(*a, |ga| axpy(ga, &g, |j| c * g[j])),
            Op::Offset(a) => with_grad!(*a, |ga| axpy(ga, &g, |j| g[j])),
            Op::Sigmoid(a) => with_grad!(*a, |ga| axpy(ga, &g, |j| g[j] * y[j] * (1.0 - y[j]))),
            Op::Tanh(a) => with_grad!(*a, |ga| axpy(ga, &g, |j| g[j] * (1.0 - y[j] * y[j]))),
            Op::Exp(a) => with_grad!(*a, |ga| axpy(ga, &g, |j| g[j] * y[j])),
            Op::Log(a) => {
                let x = val(*a);
                with_grad!(*a, |ga| axpy(ga, &g, |j| g[j] / x[j]))
            }
            Op::Abs(a) => {
                let x = val(*a);
                with_grad!(*a, |ga| axpy(ga, &g, |j| g[j] * sign(x[j])))
            }
            Op::Relu(a) => {
                let x = val(*a);
                with_grad!(*a, |ga| axpy(ga, &g, |j| if x[j] > 0.0 { g[j] } else { 0.0 }))
            }
            Op::Square(a) => {
                let x = val(*a);
                with_grad!(*a, |ga| axpy(ga, &g, |j| 2.0 * x[j] * g[j]))
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G · Bᵀ
                with_grad!(*a, |ga| gemm(m, n, k, &g, n, 1, tb.data(), 1, n, ga, 1.0, 1.0));
                // dB = Aᵀ · G
                with_grad!(*b, |gb| gemm(k, m, n, ta.data(), 1, k, &g, n, 1, gb, 1.0, 1.0));
            }
            Op::Sum(a) => with_grad!(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.numel().max(1) as f64;
                with_grad!(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n))
            }
            Op::SumLast(a) => {
                let cols = nodes[a.0].value.cols().max(1);
                with_grad!(*a, |ga| ga
                    .iter_mut()
                    .enumerate()
                    .for_each(|(j, x)| *x += g[j / cols]))
            }
            Op::ScaleRows(a, w) => {
                let cols = nodes[a.0].value.cols().max(1);
                with_grad!(*a, |ga| axpy(ga, &g, |j| g[j] * w[j / cols]))
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].value.cols();
                    with_grad!(*p, |gp| {
                        for (r, row) in gp.chunks_mut(c.max(1)).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + c];
                            row.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.numel();
                    with_grad!(*p, |gp| gp
                        .iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(d, s)| *d += s));
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let src_cols = nodes[a.0].value.cols();
                let c = node.value.cols();
                with_grad!(*a, |ga| {
                    for (r, row) in g.chunks(c.max(1)).enumerate() {
                        let dst = &mut ga[r * src_cols + start..r * src_cols + start + c];
                        dst.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                    }
                })
            }
            Op::SliceRows(a, start) => {
                let cols = node.value.cols();
                let off = start * cols;
                with_grad!(*a, |ga| ga[off..off + g.len()]
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(d, s)| *d += s))
            }
            Op::Reshape(a) => with_grad!(*a, |ga| axpy(ga, &g, |j| g[j])),
            Op::Gather(table, ids) => {
                let d = nodes[table.0].value.cols();
                with_grad!(*table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * d..(id + 1) * d];
                        dst.iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(x, s)| *x += s);
                    }
                })
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = nodes[logits.0].value.cols();
                with_grad!(*logits, |gl| {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let row = &mut gl[r * v..(r + 1) * v];
                        let p = &probs[r * v..(r + 1) * v];
                        row.iter_mut().zip(p).for_each(|(d, &pi)| *d += g[r] * pi);
                        row[t] -= g[r];
                    }
                })
            }
        }
    }
}

/// Gradient buffer of `v`, or `None` when `v` needs no gradient.
fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn axpy(dst: &mut [f64], g: &[f64], f: impl Fn(usize) -> f64) {
    debug_assert_eq!(dst.len(), g.len());
    for (j, d) in dst.iter_mut().enumerate() {
        *d += f(j);
    }
}

/// Adds `f(j)` for every output index `j` into `dst[j % dst.len()]`,
/// undoing suffix broadcasting.
fn reduce_into(dst: &mut [f64], g: &[f64], f: impl Fn(usize) -> f64) {
    let n = dst.len();
    if n == g.len() {
        axpy(dst, g, f);
    } else {
        for j in 0..g.len() {
            dst[j % n] += f(j);
        }
    }
}

/// `c ← alpha·A·B + beta·c` with explicit row/column strides for A and B.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    alpha: f64,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: strides describe in-bounds m×k, k×n and m×n row-major views
    // of the given slices; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(t: &mut Tape, xs: &[f64]) -> Var {
        t.leaf(Tensor::vector(xs.to_vec()), true)
    }

    #[test]
    fn add_vectors() {
        let mut t = Tape::new();
        let a = v(&mut t, &[1.0, 2.0]);
        let b = v(&mut t, &[3.0, 4.0]);
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let a = v(&mut t, &[0.0]);
        let s = t.sigmoid(a);
        assert_eq!(t.value(s).data(), &[0.5]);
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0), true);
        let y = t.tanh(x);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]), false);
        let b = t.leaf(Tensor::zeros(&[2]), false);
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn matmul_small() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap(), false);
        let b = t.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap(), false);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
        assert!(t.matmul(a, a).is_err());
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let x = Tensor::matrix(3, 2, vec![1.0, -2.0, 3.5, 0.0, 7.0, 1.0]).unwrap();
        let i = t.leaf(Tensor::identity(3), false);
        let xv = t.leaf(x.clone(), false);
        let y = t.matmul(i, xv).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn backward_identity_and_square() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0), true);
        t.backward(x).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0]);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0), true);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = v(&mut t, &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn repeated_backward_doubles_leaf_gradients() {
        let mut t = Tape::new();
        let x = v(&mut t, &[0.3, -1.2]);
        let y = t.tanh(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        let once = t.grad(x).unwrap();
        t.backward(s).unwrap();
        let twice = t.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(3, 2, vec![1.0; 6]).unwrap(), false);
        let b = v(&mut t, &[0.5, -0.5]);
        let y = t.add(x, b).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_log_v() {
        let mut t = Tape::new();
        let l = v(&mut t, &[0.0; 4]);
        let ce = t.cross_entropy(l, &[Some(2)]).unwrap();
        assert!((t.value(ce).item().unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(t.cross_entropy(l, &[Some(4)]).is_err());
    }

    #[test]
    fn masked_rows_contribute_nothing() {
        let mut t = Tape::new();
        let l = t.leaf(
            Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            true,
        );
        let ce = t.cross_entropy(l, &[None, Some(0)]).unwrap();
        assert_eq!(t.value(ce).data()[0], 0.0);
        let s = t.sum(ce);
        t.backward(s).unwrap();
        let g = t.grad(l).unwrap();
        assert_eq!(&g.data()[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn elementwise_dispatch_checks_arity() {
        let mut t = Tape::new();
        let a = v(&mut t, &[1.0]);
        assert!(t.elementwise(Elementwise::Add, a, None).is_err());
        assert!(t.elementwise(Elementwise::Exp, a, Some(a)).is_err());
        let e = t.elementwise(Elementwise::Exp, a, None).unwrap();
        assert!((t.value(e).data()[0] - 1f64.exp()).abs() < 1e-15);
    }
}
