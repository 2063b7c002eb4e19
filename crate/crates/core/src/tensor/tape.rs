//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass in creation order,
//! which is already a topological order. [`Tape::backward`] consumes the tape
//! and walks it in reverse, accumulating vector-Jacobian products into a
//! [`Gradients`] table. Nothing survives between passes.

use super::dense::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Guard used by `l2_normalize` and `log`.
pub const EPS: f64 = 1e-12;

/// Finite stand-in for `-inf` in masked logit positions.
pub const MASKED_LOGIT: f64 = -1e30;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Broadcast(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    MaskRows(Var, Vec<bool>),
    GatherCols(Var, Vec<usize>),
    Col(Var, usize),
    RowDot(Var, Var),
    MaskDiagonal(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient table produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zero-filled when no path reached it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(&[r, c])
            }
        }
    }
}

/// Operation recorder for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Dimension {
                op,
                lhs: vec![da.0, da.1],
                rhs: vec![db.0, db.1],
            });
        }
        Ok(da)
    }

    /// `a · b` for `a: m x k`, `b: k x n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::with_matrix_shape(m, n, out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` for `a: m x k`, `b: n x k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_t",
                lhs: vec![m, k],
                rhs: vec![n, k2],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::with_matrix_shape(m, n, out), Op::MatMulT(a, b), ng))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (r, c) = self.same_shape(op, a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((Tensor::with_matrix_shape(r, c, out), self.ng(a) || self.ng(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((r, c), (br, bc)) = (self.dims(a), self.dims(b));
        if br != 1 || bc != c {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: vec![r, c],
                rhs: vec![br, bc],
            });
        }
        let brow = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += bv;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::with_matrix_shape(r, c, out), Op::AddRow(a, b), ng))
    }

    /// `x · w + b` with `w: in x out` and `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Scales row `i` of `a` by `s[i]`, with `s: r x 1`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let ((r, c), (sr, sc)) = (self.dims(a), self.dims(s));
        if sr != r || sc != 1 {
            return Err(Error::Dimension {
                op: "mul_col",
                lhs: vec![r, c],
                rhs: vec![sr, sc],
            });
        }
        let sv = self.value(s).data();
        let mut out = self.value(a).data().to_vec();
        for (row, &k) in out.chunks_mut(c).zip(sv) {
            for o in row.iter_mut() {
                *o *= k;
            }
        }
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(Tensor::with_matrix_shape(r, c, out), Op::MulCol(a, s), ng))
    }

    /// Repeats the `1 x c` row `a` into `rows x c`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != 1 {
            return Err(Error::Dimension {
                op: "broadcast_rows",
                lhs: vec![r, c],
                rhs: vec![rows, c],
            });
        }
        let row = self.value(a).data();
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(row);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::with_matrix_shape(rows, c, out), Op::Broadcast(a), ng))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> (Tensor, bool) {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        (Tensor::with_matrix_shape(r, c, out), self.ng(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (t, ng) = self.map(a, |x| x * k);
        self.push(t, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let (t, ng) = self.map(a, |x| x + k);
        self.push(t, Op::AddScalar(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (t, ng) = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (t, ng) = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (t, ng) = self.map(a, f64::exp);
        self.push(t, Op::Exp(a), ng)
    }

    /// Natural log with its argument clamped to at least [`EPS`].
    pub fn log(&mut self, a: Var) -> Var {
        let (t, ng) = self.map(a, |x| x.max(EPS).ln());
        self.push(t, Op::Log(a), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        self.push(Tensor::with_matrix_shape(r, c, out), Op::Softmax(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::with_matrix_shape(r, c, out), Op::LogSoftmax(a), ng)
    }

    /// Row-wise ℓ2 normalisation; rows with norm at most [`EPS`] map to zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        let mut norms = Vec::with_capacity(r);
        for row in out.chunks_mut(c) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > EPS {
                row.iter_mut().for_each(|x| *x /= n);
            } else {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
            norms.push(n);
        }
        let ng = self.ng(a);
        self.push(Tensor::with_matrix_shape(r, c, out), Op::L2Normalize(a, norms), ng)
    }

    /// Horizontal concatenation of equal-height blocks.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of zero tensors"))?;
        let r = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: vec![r],
                    rhs: vec![pr, pc],
                });
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::with_matrix_shape(r, total, out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// Vertical concatenation of equal-width blocks.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of zero tensors"))?;
        let c = self.dims(first).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![c],
                    rhs: vec![pr, pc],
                });
            }
            out.extend_from_slice(self.value(p).data());
            rows += pr;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::with_matrix_shape(rows, c, out),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Gathers rows `idx` of `a`.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Dimension {
                op: "select_rows",
                lhs: vec![r, c],
                rhs: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(self.value(a).row(i));
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::with_matrix_shape(idx.len(), c, out),
            Op::SelectRows(a, idx.to_vec()),
            ng,
        ))
    }

    /// Replaces every row with `keep[i] == false` by exact zeros, whatever it held.
    pub fn mask_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if keep.len() != r {
            return Err(Error::Dimension {
                op: "mask_rows",
                lhs: vec![r, c],
                rhs: vec![keep.len()],
            });
        }
        let mut out = self.value(a).data().to_vec();
        for (row, &k) in out.chunks_mut(c).zip(keep) {
            if !k {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::with_matrix_shape(r, c, out),
            Op::MaskRows(a, keep.to_vec()),
            ng,
        ))
    }

    /// Picks `a[i, idx[i]]` for every row, giving `r x 1`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::Dimension {
                op: "gather_cols",
                lhs: vec![r, c],
                rhs: vec![idx.len()],
            });
        }
        let out = idx.iter().enumerate().map(|(i, &j)| self.value(a).get(i, j)).collect();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::with_matrix_shape(r, 1, out),
            Op::GatherCols(a, idx.to_vec()),
            ng,
        ))
    }

    /// Column `j` of `a` as `r x 1`.
    pub fn col(&mut self, a: Var, j: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if j >= c {
            return Err(Error::Dimension {
                op: "col",
                lhs: vec![r, c],
                rhs: vec![j],
            });
        }
        let out = (0..r).map(|i| self.value(a).get(i, j)).collect();
        let ng = self.ng(a);
        Ok(self.push(Tensor::with_matrix_shape(r, 1, out), Op::Col(a, j), ng))
    }

    /// Row-wise dot product of two equal-shape matrices, giving `r x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = (0..r)
            .map(|i| {
                av[i * c..(i + 1) * c]
                    .iter()
                    .zip(&bv[i * c..(i + 1) * c])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::with_matrix_shape(r, 1, out), Op::RowDot(a, b), ng))
    }

    /// Overwrites the diagonal of a square matrix with [`MASKED_LOGIT`].
    pub fn mask_diagonal(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != c {
            return Err(Error::Dimension {
                op: "mask_diagonal",
                lhs: vec![r, c],
                rhs: vec![c, r],
            });
        }
        let mut out = self.value(a).data().to_vec();
        for i in 0..r {
            out[i * c + i] = MASKED_LOGIT;
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::with_matrix_shape(r, c, out), Op::MaskDiagonal(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        let shapes: Vec<_> = self.nodes.iter().map(|nd| dims(&nd.value)).collect();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let y = node.value.data();
            let (r, c) = shapes[id];
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                let (vr, vc) = shapes[v.0];
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; vr * vc]);
                f(buf);
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = shapes[a.0];
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |da| gemm_nt(&g, bv, da, m, c, k));
                    acc(*b, &mut |db| gemm_tn(av, &g, db, m, k, c));
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = shapes[a.0];
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |da| gemm_nn(&g, bv, da, m, c, k));
                    acc(*b, &mut |db| gemm_tn(&g, av, db, m, c, k));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |da| add_into(da, &g));
                    acc(*b, &mut |db| add_into(db, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |da| add_into(da, &g));
                    acc(*b, &mut |db| db.iter_mut().zip(&g).for_each(|(d, gv)| *d -= gv));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |da| {
                        for ((d, gv), x) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gv * x;
                        }
                    });
                    acc(*b, &mut |db| {
                        for ((d, gv), x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gv * x;
                        }
                    });
                }
                Op::AddRow(a, b) => {
                    acc(*a, &mut |da| add_into(da, &g));
                    acc(*b, &mut |db| {
                        for row in g.chunks(c) {
                            add_into(db, row);
                        }
                    });
                }
                Op::MulCol(a, s) => {
                    let (av, sv) = (nodes[a.0].value.data(), nodes[s.0].value.data());
                    acc(*a, &mut |da| {
                        for i in 0..r {
                            for j in 0..c {
                                da[i * c + j] += g[i * c + j] * sv[i];
                            }
                        }
                    });
                    acc(*s, &mut |ds| {
                        for i in 0..r {
                            ds[i] += (0..c).map(|j| g[i * c + j] * av[i * c + j]).sum::<f64>();
                        }
                    });
                }
                Op::Broadcast(a) => acc(*a, &mut |da| {
                    for row in g.chunks(c) {
                        add_into(da, row);
                    }
                }),
                Op::Scale(a, k) => acc(*a, &mut |da| {
                    da.iter_mut().zip(&g).for_each(|(d, gv)| *d += k * gv)
                }),
                Op::AddScalar(a) => acc(*a, &mut |da| add_into(da, &g)),
                Op::Tanh(a) => acc(*a, &mut |da| {
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }),
                Op::Sigmoid(a) => acc(*a, &mut |da| {
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }),
                Op::Exp(a) => acc(*a, &mut |da| {
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv;
                    }
                }),
                Op::Log(a) => {
                    let av = nodes[a.0].value.data();
                    acc(*a, &mut |da| {
                        for ((d, gv), x) in da.iter_mut().zip(&g).zip(av) {
                            if *x > EPS {
                                *d += gv / x;
                            }
                        }
                    })
                }
                Op::Softmax(a) => acc(*a, &mut |da| {
                    for i in 0..r {
                        let (gr, yr) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            da[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }),
                Op::LogSoftmax(a) => acc(*a, &mut |da| {
                    for i in 0..r {
                        let (gr, yr) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..c {
                            da[i * c + j] += gr[j] - yr[j].exp() * gsum;
                        }
                    }
                }),
                Op::L2Normalize(a, norms) => acc(*a, &mut |da| {
                    for i in 0..r {
                        let nrm = norms[i];
                        if nrm <= EPS {
                            continue;
                        }
                        let (gr, yr) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            da[i * c + j] += (gr[j] - yr[j] * dot) / nrm;
                        }
                    }
                }),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pc = shapes[p.0].1;
                        acc(*p, &mut |dp| {
                            for i in 0..r {
                                add_into(&mut dp[i * pc..(i + 1) * pc], &g[i * c + offset..i * c + offset + pc]);
                            }
                        });
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = shapes[p.0].0 * c;
                        acc(*p, &mut |dp| add_into(dp, &g[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::SelectRows(a, idx) => acc(*a, &mut |da| {
                    for (i, &src) in idx.iter().enumerate() {
                        add_into(&mut da[src * c..(src + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                }),
                Op::MaskRows(a, keep) => acc(*a, &mut |da| {
                    for (i, &k) in keep.iter().enumerate() {
                        if k {
                            add_into(&mut da[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                }),
                Op::GatherCols(a, idx) => {
                    let ac = shapes[a.0].1;
                    acc(*a, &mut |da| {
                        for (i, &j) in idx.iter().enumerate() {
                            da[i * ac + j] += g[i];
                        }
                    })
                }
                Op::Col(a, j) => {
                    let ac = shapes[a.0].1;
                    acc(*a, &mut |da| {
                        for i in 0..r {
                            da[i * ac + j] += g[i];
                        }
                    })
                }
                Op::RowDot(a, b) => {
                    let ac = shapes[a.0].1;
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |da| {
                        for i in 0..r {
                            for j in 0..ac {
                                da[i * ac + j] += g[i] * bv[i * ac + j];
                            }
                        }
                    });
                    acc(*b, &mut |db| {
                        for i in 0..r {
                            for j in 0..ac {
                                db[i * ac + j] += g[i] * av[i * ac + j];
                            }
                        }
                    });
                }
                Op::MaskDiagonal(a) => acc(*a, &mut |da| {
                    for i in 0..r {
                        for j in 0..c {
                            if i != j {
                                da[i * c + j] += g[i * c + j];
                            }
                        }
                    }
                }),
                Op::Sum(a) => acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
                Op::Mean(a) => {
                    let k = g[0] / shapes[a.0].0.max(1) as f64 / shapes[a.0].1.max(1) as f64;
                    acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += k));
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&shapes)
            .zip(&self.nodes)
            .map(|((g, &(r, c)), node)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.needs_grad => Some(Tensor::with_matrix_shape(r, c, g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over one slice.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}
