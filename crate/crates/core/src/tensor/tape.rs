use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// Elementwise add/mul with broadcasting. `None` index maps mean the
    /// operand has the output shape.
    Add(Var, Var, Option<Vec<usize>>, Option<Vec<usize>>),
    Mul(Var, Var, Option<Vec<usize>>, Option<Vec<usize>>),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of operations. Nodes are appended in execution order,
/// so every node's parents precede it and the reverse sweep in
/// [`Tape::backward`] visits each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Accumulated adjoints of leaf and parameter nodes.
    accum: Vec<Option<Vec<f64>>>,
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// Numpy-style broadcast of two shapes. Returns the output shape and, for each
/// operand that differs from it, the flat source index of every output element.
fn broadcast(
    op: &str,
    a: &[usize],
    b: &[usize],
) -> Result<(Vec<usize>, Option<Vec<usize>>, Option<Vec<usize>>)> {
    if a == b {
        return Ok((a.to_vec(), None, None));
    }
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut out = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        out.push(match (x, y) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(dim_err(op, a, b)),
        });
    }
    let strides = |s: &[usize]| {
        let mut st = vec![0; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            st[d] = if s[d] == 1 { 0 } else { acc };
            acc *= s[d];
        }
        st
    };
    let index_map = |s: &[usize]| -> Option<Vec<usize>> {
        if s == out.as_slice() {
            return None;
        }
        let st = strides(s);
        let n: usize = out.iter().product();
        let mut idx = vec![0usize; rank];
        let mut map = Vec::with_capacity(n);
        for _ in 0..n {
            map.push(idx.iter().zip(&st).map(|(i, s)| i * s).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Some(map)
    };
    let (ia, ib) = (index_map(&pa), index_map(&pb));
    Ok((out, ia, ib))
}

fn gather(values: &[f64], map: &Option<Vec<usize>>) -> Vec<f64> {
    match map {
        None => values.to_vec(),
        Some(m) => m.iter().map(|&i| values[i]).collect(),
    }
}

/// `(outer, dim, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax over the last axis of a row-major buffer.
pub fn softmax_rows(values: &[f64], cols: usize) -> Vec<f64> {
    let mut out = values.to_vec();
    out.chunks_mut(cols).for_each(softmax_in_place);
    out
}

/// Numerically stable `log(softmax(x))` of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.accum.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Record a constant or a differentiable leaf (per `t.requires_grad()`).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let value = Tensor {
            grad: None,
            ..t
        };
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Copy a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let src = store.get(id);
        let value = Tensor {
            shape: src.shape.clone(),
            values: src.values.clone(),
            requires_grad: src.requires_grad,
            grad: None,
        };
        let rg = src.requires_grad;
        self.push(value, Op::Param(id), rg)
    }

    /// Accumulated adjoint of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.accum[v.0].as_deref()
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.nodes.iter().zip(&self.accum).filter_map(|(n, g)| match (&n.op, g) {
            (Op::Param(id), Some(g)) => Some((*id, g.as_slice())),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let (m, k) = self.value(a).dims2().map_err(|_| dim_err("matmul", &sa, &sb))?;
        let (k2, n) = self.value(b).dims2().map_err(|_| dim_err("matmul", &sa, &sb))?;
        if sa.len() != 2 || sb.len() != 2 || k != k2 {
            return Err(dim_err("matmul", &sa, &sb));
        }
        let out = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, mul: bool) -> Result<Var> {
        let name = if mul { "mul" } else { "add" };
        let (shape, ia, ib) = broadcast(name, self.shape(a), self.shape(b))?;
        let av = gather(self.value(a).values(), &ia);
        let bv = gather(self.value(b).values(), &ib);
        let out: Vec<f64> = if mul {
            av.iter().zip(&bv).map(|(x, y)| x * y).collect()
        } else {
            av.iter().zip(&bv).map(|(x, y)| x + y).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        let op = if mul {
            Op::Mul(a, b, ia, ib)
        } else {
            Op::Add(a, b, ia, ib)
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, false)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, true)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out = t.values().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = t.values().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!(
                "concat axis {axis} out of range for shape {base:?}"
            )));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(dim_err("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.values()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let axis = parts
            .first()
            .map(|p| self.shape(*p).len().saturating_sub(1))
            .unwrap_or(0);
        self.concat(parts, axis)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "narrow axis {axis} [{start}, {}) out of range for shape {shape:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.value(a).values();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Narrow(a, axis, start), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let n: usize = shape.iter().product();
        if n != t.numel() {
            return Err(dim_err("reshape", t.shape(), &shape));
        }
        let value = Tensor::new(shape, t.values().to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose needs a matrix, got {:?}",
                t.shape()
            )));
        }
        let (r, c) = t.dims2()?;
        let v = t.values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = *t.shape().last().unwrap();
        let out = softmax_rows(t.values(), cols);
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (n×V).
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, v) = t.dims2()?;
        if targets.len() != n || n == 0 {
            return Err(Error::Dimension(format!(
                "cross-entropy: {} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&y| y >= v) {
            return Err(Error::Index(format!(
                "target id {bad} out of range for vocabulary of {v}"
            )));
        }
        let probs = softmax_rows(t.values(), v);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| -log_softmax(t.row_slice(i))[y])
            .sum::<f64>()
            / n as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Select rows of a 2-D table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::Argument("gather of zero rows".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!(
                    "row {id} out of range for table with {rows} rows"
                )));
            }
            out.extend_from_slice(t.row_slice(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), cols], out)?,
            Op::GatherRows(table, ids.to_vec()),
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Adjoints of leaf and parameter
    /// nodes are added to their accumulators, so calling this twice doubles
    /// them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let numel = |v: Var| self.nodes[v.0].value.numel();
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            let add_into = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, f: &dyn Fn(&mut [f64])| {
                if rg(v) {
                    f(grads[v.0].get_or_insert_with(|| vec![0.0; numel(v)]));
                }
            };
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    match &mut self.accum[idx] {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[a.0].value.dims2()?;
                    let (_, n) = self.nodes[b.0].value.dims2()?;
                    let av = self.nodes[a.0].value.values();
                    let bv = self.nodes[b.0].value.values();
                    // dA = G · Bᵀ
                    add_into(&mut grads, *a, &|buf| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                buf[i * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    // dB = Aᵀ · G
                    add_into(&mut grads, *b, &|buf| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = av[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for (o, gv) in buf[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += av * gv;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b, ia, ib) => {
                    for (v, map) in [(*a, ia), (*b, ib)] {
                        add_into(&mut grads, v, &|buf| match map {
                            None => buf.iter_mut().zip(&g).for_each(|(o, x)| *o += x),
                            Some(m) => m.iter().zip(&g).for_each(|(&i, x)| buf[i] += x),
                        });
                    }
                }
                Op::Mul(a, b, ia, ib) => {
                    let av = gather(self.nodes[a.0].value.values(), ia);
                    let bv = gather(self.nodes[b.0].value.values(), ib);
                    for (v, map, other) in [(*a, ia, &bv), (*b, ib, &av)] {
                        add_into(&mut grads, v, &|buf| match map {
                            None => buf
                                .iter_mut()
                                .zip(g.iter().zip(other.iter()))
                                .for_each(|(o, (x, y))| *o += x * y),
                            Some(m) => m
                                .iter()
                                .zip(g.iter().zip(other.iter()))
                                .for_each(|(&i, (x, y))| buf[i] += x * y),
                        });
                    }
                }
                Op::Scale(a, f) => add_into(&mut grads, *a, &|buf| {
                    buf.iter_mut().zip(&g).for_each(|(o, x)| *o += x * f)
                }),
                Op::Tanh(a) => {
                    let y = node.value.values();
                    add_into(&mut grads, *a, &|buf| {
                        for ((o, x), y) in buf.iter_mut().zip(&g).zip(y) {
                            *o += x * (1.0 - y * y);
                        }
                    })
                }
                Op::Sigmoid(a) => {
                    let y = node.value.values();
                    add_into(&mut grads, *a, &|buf| {
                        for ((o, x), y) in buf.iter_mut().zip(&g).zip(y) {
                            *o += x * y * (1.0 - y);
                        }
                    })
                }
                Op::Relu(a) => {
                    let xin = self.nodes[a.0].value.values();
                    add_into(&mut grads, *a, &|buf| {
                        for ((o, x), v) in buf.iter_mut().zip(&g).zip(xin) {
                            if *v > 0.0 {
                                *o += x;
                            }
                        }
                    })
                }
                Op::Concat(parts, axis) => {
                    let shape = node.value.shape();
                    let (outer, total, inner) = split_axis(shape, *axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.shape()[*axis];
                        add_into(&mut grads, *p, &|buf| {
                            for o in 0..outer {
                                let src = o * total * inner + offset * inner;
                                let dst = o * len * inner;
                                for (d, s) in buf[dst..dst + len * inner]
                                    .iter_mut()
                                    .zip(&g[src..src + len * inner])
                                {
                                    *d += s;
                                }
                            }
                        });
                        offset += len;
                    }
                }
                Op::Narrow(a, axis, start) => {
                    let shape = self.nodes[a.0].value.shape();
                    let (outer, dim, inner) = split_axis(shape, *axis);
                    let len = node.value.shape()[*axis];
                    add_into(&mut grads, *a, &|buf| {
                        for o in 0..outer {
                            let dst = o * dim * inner + start * inner;
                            let src = o * len * inner;
                            for (d, s) in buf[dst..dst + len * inner]
                                .iter_mut()
                                .zip(&g[src..src + len * inner])
                            {
                                *d += s;
                            }
                        }
                    });
                }
                Op::Reshape(a) => add_into(&mut grads, *a, &|buf| {
                    buf.iter_mut().zip(&g).for_each(|(o, x)| *o += x)
                }),
                Op::Transpose(a) => {
                    let (r, c) = self.nodes[a.0].value.dims2()?;
                    add_into(&mut grads, *a, &|buf| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[i * c + j] += g[j * r + i];
                            }
                        }
                    })
                }
                Op::Sum(a) => add_into(&mut grads, *a, &|buf| {
                    buf.iter_mut().for_each(|o| *o += g[0])
                }),
                Op::Softmax(a) => {
                    let y = node.value.values();
                    let cols = *node.value.shape().last().unwrap();
                    add_into(&mut grads, *a, &|buf| {
                        for ((brow, grow), yrow) in buf
                            .chunks_mut(cols)
                            .zip(g.chunks(cols))
                            .zip(y.chunks(cols))
                        {
                            let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                            for ((o, x), y) in brow.iter_mut().zip(grow).zip(yrow) {
                                *o += y * (x - dot);
                            }
                        }
                    })
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len();
                    let v = probs.len() / n;
                    let scale = g[0] / n as f64;
                    add_into(&mut grads, *logits, &|buf| {
                        for (i, &y) in targets.iter().enumerate() {
                            for j in 0..v {
                                let onehot = if j == y { 1.0 } else { 0.0 };
                                buf[i * v + j] += scale * (probs[i * v + j] - onehot);
                            }
                        }
                    })
                }
                Op::GatherRows(table, ids) => {
                    let cols = node.value.shape()[1];
                    add_into(&mut grads, *table, &|buf| {
                        for (r, &id) in ids.iter().enumerate() {
                            for c in 0..cols {
                                buf[id * cols + c] += g[r * cols + c];
                            }
                        }
                    })
                }
            }
        }
        Ok(())
    }
}
