//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read in place from the borrowed [`ParameterStore`]; [`Graph::backward`]
//! consumes the tape and returns per-parameter [`Gradients`].

use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::{matmul_acc, transpose};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-12;
const NORM_FLOOR: f64 = 1e-12;
const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather { table: ParamId, rows: Vec<usize> },
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Tanh(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    SliceRows { x: NodeId, start: usize },
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId),
    L2Norm { x: NodeId, norms: Vec<f64> },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SoftCrossEntropy {
        logits: NodeId,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

/// Numerically stable softmax over the entries of `row` where `allowed`
/// holds; other entries become zero. A row with nothing allowed is all zero.
fn masked_softmax_row(row: &[f64], allowed: Option<&[bool]>, out: &mut [f64]) {
    let ok = |j: usize| allowed.map_or(true, |a| a[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| ok(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
        *o = if ok(j) { libm::exp(v - max) } else { 0.0 };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(p) => self.store.value(p).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// The single value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        assert_eq!(rows * cols, data.len(), "input shape mismatch");
        self.push(Op::Input, rows, cols, data)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        let t = self.store.value(p);
        let (r, c) = (t.rows(), t.cols());
        self.push(Op::Param(p), r, c, Vec::new())
    }

    /// Rows of an embedding table.
    pub fn gather(&mut self, table: ParamId, rows: &[usize]) -> Result<NodeId> {
        let t = self.store.value(table);
        let (n, c) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::IndexOutOfRange { index: r, len: n });
            }
            out.extend_from_slice(t.row(r));
        }
        Ok(self.push(
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            rows.len(),
            c,
            out,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), m, k, n, &mut out);
        self.push(Op::MatMul(a, b), m, n, out)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimension");
        let bt = transpose(self.value(b), n, k);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), &bt, m, k, n, &mut out);
        self.push(Op::MatMulT(a, b), m, n, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Add(a, b), r, c, out)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let rv = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, b) in chunk.iter_mut().zip(rv) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), r, c, out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Mul(a, b), r, c, out)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Scale(a, s), r, c, out)
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self
            .value(a)
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x / SQRT_2)))
            .collect();
        let (r, c) = self.shape(a);
        self.push(Op::Gelu(a), r, c, out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|&x| libm::tanh(x)).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Tanh(a), r, c, out)
    }

    /// Row-wise normalization with gain and bias rows of width `c`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            r,
            c,
            out,
        )
    }

    /// Row-wise softmax. `allowed`, when given, is an `r×c` mask; masked
    /// entries get probability zero.
    pub fn softmax(&mut self, x: NodeId, allowed: Option<&[bool]>) -> NodeId {
        let (r, c) = self.shape(x);
        if let Some(a) = allowed {
            assert_eq!(a.len(), r * c, "softmax mask shape");
        }
        let xv = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            masked_softmax_row(
                &xv[i * c..(i + 1) * c],
                allowed.map(|a| &a[i * c..(i + 1) * c]),
                &mut out[i * c..(i + 1) * c],
            );
        }
        self.push(Op::Softmax(x), r, c, out)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = self.shape(x);
        assert!(start + len <= c, "slice_cols range");
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        self.push(Op::SliceCols { x, start }, r, len, out)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                assert_eq!(self.shape(p).0, r, "concat_cols rows");
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), r, c, out)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = self.shape(x);
        assert!(start + len <= r, "slice_rows range");
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        self.push(Op::SliceRows { x, start }, len, c, out)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows cols");
            out.extend_from_slice(self.value(p));
            r += pr;
        }
        self.push(Op::ConcatRows(parts.to_vec()), r, c, out)
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let (r, c) = self.shape(x);
        assert_eq!(r * c, rows * cols, "reshape size");
        let out = self.value(x).to_vec();
        self.push(Op::Reshape(x), rows, cols, out)
    }

    /// Each row divided by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let xv = self.value(x);
        let mut norms = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(NORM_FLOOR);
            norms[i] = n;
            for j in 0..c {
                out[i * c + j] = row[j] / n;
            }
        }
        self.push(Op::L2Norm { x, norms }, r, c, out)
    }

    /// Sum over rows of `-log softmax(logits_i)[target_i]`. `allowed`, when
    /// given, restricts each row's softmax to a subset of classes.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        allowed: Option<&[bool]>,
    ) -> Result<NodeId> {
        let (r, c) = self.shape(logits);
        assert_eq!(targets.len(), r, "one target per row");
        let lv = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let t = targets[i];
            let mask = allowed.map(|a| &a[i * c..(i + 1) * c]);
            if t >= c || mask.is_some_and(|m| !m[t]) {
                return Err(Error::IndexOutOfRange { index: t, len: c });
            }
            let row = &lv[i * c..(i + 1) * c];
            let max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| mask.map_or(true, |m| m[j]))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + libm::log(
                    row.iter()
                        .enumerate()
                        .filter(|&(j, _)| mask.map_or(true, |m| m[j]))
                        .map(|(_, &v)| libm::exp(v - max))
                        .sum::<f64>(),
                );
            loss += lse - row[t];
            masked_softmax_row(row, mask, &mut probs[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            1,
            1,
            vec![loss],
        ))
    }

    /// Sum over rows of `-Σ_j t_ij log softmax(logits_i)_j`, with the softmax
    /// restricted to `allowed` entries. Targets must be zero where masked.
    pub fn soft_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[f64],
        allowed: Option<&[bool]>,
    ) -> NodeId {
        let (r, c) = self.shape(logits);
        assert_eq!(targets.len(), r * c, "soft targets shape");
        let lv = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let mask = allowed.map(|a| &a[i * c..(i + 1) * c]);
            let row = &lv[i * c..(i + 1) * c];
            let p = &mut probs[i * c..(i + 1) * c];
            masked_softmax_row(row, mask, p);
            let max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| mask.map_or(true, |m| m[j]))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let lse = max
                + libm::log(
                    row.iter()
                        .enumerate()
                        .filter(|&(j, _)| mask.map_or(true, |m| m[j]))
                        .map(|(_, &v)| libm::exp(v - max))
                        .sum::<f64>(),
                );
            for j in 0..c {
                let t = targets[i * c + j];
                if t != 0.0 {
                    loss -= t * (row[j] - lse);
                }
            }
        }
        self.push(
            Op::SoftCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            1,
            1,
            vec![loss],
        )
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), 1, 1, vec![s])
    }

    /// Reverse pass from a 1×1 node.
    pub fn backward(self, loss: NodeId) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Option<Vec<f64>>> = (0..self.store.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize) -> &mut Vec<f64> {
            grads[id.0].get_or_insert_with(|| vec![0.0; n])
        }

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let g = pgrads[p.0].get_or_insert_with(|| vec![0.0; gout.len()]);
                    g.iter_mut().zip(&gout).for_each(|(a, b)| *a += b);
                }
                Op::Gather { table, rows: idx } => {
                    let t = self.store.value(*table);
                    let g = pgrads[table.0].get_or_insert_with(|| vec![0.0; t.len()]);
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut g[src * cols..(src + 1) * cols];
                        dst.iter_mut()
                            .zip(&gout[r * cols..(r + 1) * cols])
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let bt = transpose(self.value(*b), k, n);
                    matmul_acc(&gout, &bt, m, n, k, slot(&mut grads, *a, m * k));
                    let at = transpose(self.value(*a), m, k);
                    matmul_acc(&at, &gout, k, m, n, slot(&mut grads, *b, k * n));
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    matmul_acc(&gout, self.value(*b), m, n, k, slot(&mut grads, *a, m * k));
                    let gt = transpose(&gout, m, n);
                    matmul_acc(&gt, self.value(*a), n, m, k, slot(&mut grads, *b, n * k));
                }
                Op::Add(a, b) => {
                    for id in [*a, *b] {
                        let g = slot(&mut grads, id, gout.len());
                        g.iter_mut().zip(&gout).for_each(|(x, y)| *x += y);
                    }
                }
                Op::AddRow(a, row) => {
                    let g = slot(&mut grads, *a, gout.len());
                    g.iter_mut().zip(&gout).for_each(|(x, y)| *x += y);
                    let g = slot(&mut grads, *row, cols);
                    for chunk in gout.chunks(cols) {
                        g.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = gout.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = gout.iter().zip(av).map(|(g, x)| g * x).collect();
                    let g = slot(&mut grads, *a, ga.len());
                    g.iter_mut().zip(&ga).for_each(|(x, y)| *x += y);
                    let g = slot(&mut grads, *b, gb.len());
                    g.iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                }
                Op::Scale(a, s) => {
                    let g = slot(&mut grads, *a, gout.len());
                    g.iter_mut().zip(&gout).for_each(|(x, y)| *x += y * s);
                }
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let local: Vec<f64> = xv
                        .iter()
                        .zip(&gout)
                        .map(|(&x, &g)| {
                            let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
                            let pdf = INV_SQRT_2PI * libm::exp(-0.5 * x * x);
                            g * (cdf + x * pdf)
                        })
                        .collect();
                    let g = slot(&mut grads, *a, local.len());
                    g.iter_mut().zip(&local).for_each(|(x, y)| *x += y);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let g = slot(&mut grads, *a, gout.len());
                    for ((x, &go), &yv) in g.iter_mut().zip(&gout).zip(y) {
                        *x += go * (1.0 - yv * yv);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma).to_vec();
                    let mut dgamma = vec![0.0; cols];
                    let mut dbeta = vec![0.0; cols];
                    let mut dx = vec![0.0; rows * cols];
                    let cf = cols as f64;
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let go = &gout[r * cols..(r + 1) * cols];
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..cols {
                            dgamma[j] += go[j] * xh[j];
                            dbeta[j] += go[j];
                            dxhat[j] = go[j] * gv[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xh[j];
                        }
                        let k = inv_std[r] / cf;
                        for j in 0..cols {
                            dx[r * cols + j] = k * (cf * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                    for (id, d) in [(*x, dx), (*gamma, dgamma), (*beta, dbeta)] {
                        let g = slot(&mut grads, id, d.len());
                        g.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let g = slot(&mut grads, *a, gout.len());
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &gout[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            g[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let xc = self.shape(*x).1;
                    let g = slot(&mut grads, *x, rows * xc);
                    for r in 0..rows {
                        for j in 0..cols {
                            g[r * xc + start + j] += gout[r * cols + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let g = slot(&mut grads, p, rows * w);
                        for r in 0..rows {
                            for j in 0..w {
                                g[r * w + j] += gout[r * cols + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let xr = self.shape(*x).0;
                    let g = slot(&mut grads, *x, xr * cols);
                    for (a, b) in g[start * cols..(start + rows) * cols].iter_mut().zip(&gout) {
                        *a += b;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.shape(p).0 * cols;
                        let g = slot(&mut grads, p, n);
                        for (a, b) in g.iter_mut().zip(&gout[offset..offset + n]) {
                            *a += b;
                        }
                        offset += n;
                    }
                }
                Op::Reshape(x) => {
                    let g = slot(&mut grads, *x, gout.len());
                    g.iter_mut().zip(&gout).for_each(|(a, b)| *a += b);
                }
                Op::L2Norm { x, norms } => {
                    let y = &node.value;
                    let g = slot(&mut grads, *x, gout.len());
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &gout[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            g[r * cols + j] += (gr[j] - yr[j] * dot) / norms[r];
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = gout[0];
                    let c = self.shape(*logits).1;
                    let g = slot(&mut grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let ind = if j == t { 1.0 } else { 0.0 };
                            g[r * c + j] += s * (probs[r * c + j] - ind);
                        }
                    }
                }
                Op::SoftCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = gout[0];
                    let c = self.shape(*logits).1;
                    let g = slot(&mut grads, *logits, probs.len());
                    for r in 0..probs.len() / c {
                        let tr = &targets[r * c..(r + 1) * c];
                        let mass: f64 = tr.iter().sum();
                        for j in 0..c {
                            g[r * c + j] += s * (mass * probs[r * c + j] - tr[j]);
                        }
                    }
                }
                Op::Sum(x) => {
                    let n = self.shape(*x);
                    let g = slot(&mut grads, *x, n.0 * n.1);
                    g.iter_mut().for_each(|a| *a += gout[0]);
                }
            }
        }
        Gradients { by_param: pgrads }
    }
}
