//! Reverse-mode autodiff over a linear tape.
//!
//! The tape records primitive ops in forward order; `backward` walks node ids
//! in reverse, which is exactly reverse topological order because an op can
//! only reference earlier nodes. Gradients accumulate additively at fan-out.
//!
//! Primitive set: matmul, batched matmul, add, scale, elementwise mul,
//! row gather, row interleave, masked softmax, cross-entropy, sum, reshape.
//! Every op validates output finiteness (abort-on-NaN policy).

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Scalar, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub usize);

/// Boolean mask over the trailing two dims of an attention-score tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub allow: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Self {
        assert_eq!(allow.len(), rows * cols);
        Mask { rows, cols, allow }
    }

    /// Lower-triangular causal mask.
    pub fn causal(n: usize) -> Self {
        let mut allow = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allow[i * n + j] = true;
            }
        }
        Mask { rows: n, cols: n, allow }
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.cols + j]
    }

    pub fn block(&mut self, i: usize, j: usize) {
        self.allow[i * self.cols + j] = false;
    }

    /// Restrict one row's support to the given columns (intersection).
    pub fn restrict_row(&mut self, row: usize, cols: &[usize]) {
        for j in 0..self.cols {
            if !cols.contains(&j) {
                self.allow[row * self.cols + j] = false;
            }
        }
    }
}

enum Op<T> {
    Leaf,
    /// a[m,k] * b[k,n]
    MatMul { a: Var, b: Var },
    /// q[B,r,d] * k[B,s,d]^T -> [B,r,s]
    BmmNt { a: Var, b: Var },
    /// p[B,r,s] * v[B,s,d] -> [B,r,d]
    BmmNn { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { a: Var, c: T },
    Mul { a: Var, b: Var },
    GatherRows { table: Var, ids: Arc<Vec<usize>> },
    /// Merge rows of a and b in order: output row r takes the next row of a
    /// when from_a[r], else the next row of b.
    InterleaveRows { a: Var, b: Var, from_a: Arc<Vec<bool>> },
    /// Row softmax over the last dim; mask broadcast over leading dims.
    MaskedSoftmax { logits: Var, mask: Arc<Mask> },
    /// Mean of -log softmax(logits)[target] over rows; saves probabilities.
    CrossEntropy { logits: Var, targets: Arc<Vec<usize>>, probs: Tensor<T> },
    SumAll { a: Var },
    Reshape { a: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a computation for one backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nn(ta.data(), tb.data(), m, k, n, &mut out);
        let t = Tensor::from_vec(&[m, n], out)?;
        t.ensure_finite("matmul")?;
        Ok(self.push(t, Op::MatMul { a, b }))
    }

    /// Batched a[B,r,d] x b[B,s,d]^T -> [B,r,s].
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::ShapeMismatch {
                op: "bmm_nt",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (bsz, r, d, s) = (sa[0], sa[1], sa[2], sb[1]);
        let mut out = vec![T::zero(); bsz * r * s];
        out.par_chunks_mut(r * s).enumerate().for_each(|(i, o)| {
            matmul_nt(
                &ta.data()[i * r * d..(i + 1) * r * d],
                &tb.data()[i * s * d..(i + 1) * s * d],
                r,
                d,
                s,
                o,
            );
        });
        let t = Tensor::from_vec(&[bsz, r, s], out)?;
        t.ensure_finite("bmm_nt")?;
        Ok(self.push(t, Op::BmmNt { a, b }))
    }

    /// Batched a[B,r,s] x b[B,s,d] -> [B,r,d].
    pub fn bmm_nn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "bmm_nn",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (bsz, r, s, d) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bsz * r * d];
        out.par_chunks_mut(r * d).enumerate().for_each(|(i, o)| {
            matmul_nn(
                &ta.data()[i * r * s..(i + 1) * r * s],
                &tb.data()[i * s * d..(i + 1) * s * d],
                r,
                s,
                d,
                o,
            );
        });
        let t = Tensor::from_vec(&[bsz, r, d], out)?;
        t.ensure_finite("bmm_nn")?;
        Ok(self.push(t, Op::BmmNn { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{:?} + {:?}", ta.shape(), tb.shape()),
            });
        }
        let data: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(ta.shape(), data)?;
        t.ensure_finite("add")?;
        Ok(self.push(t, Op::Add { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<T> = ta.data().iter().map(|&x| x * c).collect();
        let t = Tensor::from_vec(ta.shape(), data)?;
        t.ensure_finite("scale")?;
        Ok(self.push(t, Op::Scale { a, c }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} * {:?}", ta.shape(), tb.shape()),
            });
        }
        let data: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::from_vec(ta.shape(), data)?;
        t.ensure_finite("mul")?;
        Ok(self.push(t, Op::Mul { a, b }))
    }

    /// out[i,:] = table[ids[i],:]
    pub fn gather_rows(&mut self, table: Var, ids: Arc<Vec<usize>>) -> Result<Var> {
        let tt = self.value(table);
        let (rows, cols) = (tt.rows(), tt.cols());
        for &id in ids.iter() {
            if id >= rows {
                return Err(Error::IndexOutOfRange { op: "gather_rows", index: id, bound: rows });
            }
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids.iter() {
            data.extend_from_slice(&tt.data()[id * cols..(id + 1) * cols]);
        }
        let t = Tensor::from_vec(&[ids.len(), cols], data)?;
        t.ensure_finite("gather_rows")?;
        Ok(self.push(t, Op::GatherRows { table, ids }))
    }

    pub fn interleave_rows(&mut self, a: Var, b: Var, from_a: Arc<Vec<bool>>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = ta.cols();
        let na = from_a.iter().filter(|&&x| x).count();
        let nb = from_a.len() - na;
        if tb.cols() != cols || ta.rows() != na || tb.rows() != nb {
            return Err(Error::ShapeMismatch {
                op: "interleave_rows",
                detail: format!(
                    "a {:?}, b {:?}, pattern {} rows ({} from a)",
                    ta.shape(),
                    tb.shape(),
                    from_a.len(),
                    na
                ),
            });
        }
        let mut data = Vec::with_capacity(from_a.len() * cols);
        let (mut ia, mut ib) = (0usize, 0usize);
        for &fa in from_a.iter() {
            if fa {
                data.extend_from_slice(&ta.data()[ia * cols..(ia + 1) * cols]);
                ia += 1;
            } else {
                data.extend_from_slice(&tb.data()[ib * cols..(ib + 1) * cols]);
                ib += 1;
            }
        }
        let t = Tensor::from_vec(&[from_a.len(), cols], data)?;
        t.ensure_finite("interleave_rows")?;
        Ok(self.push(t, Op::InterleaveRows { a, b, from_a }))
    }

    /// Row-stochastic softmax over the last dim with hard-masked entries set
    /// to exactly zero. Errors on a fully masked row.
    pub fn masked_softmax(&mut self, logits: Var, mask: Arc<Mask>) -> Result<Var> {
        let tl = self.value(logits);
        let shape = tl.shape().to_vec();
        let cols = mask.cols;
        let mrows = mask.rows;
        if shape.len() < 2 || shape[shape.len() - 1] != cols || shape[shape.len() - 2] != mrows {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                detail: format!("logits {:?} vs mask {}x{}", shape, mrows, cols),
            });
        }
        for r in 0..mrows {
            if !(0..cols).any(|c| mask.allowed(r, c)) {
                return Err(Error::FullyMaskedRow { row: r });
            }
        }
        let mut data = vec![T::zero(); tl.numel()];
        for (row, out_row) in data.chunks_mut(cols).enumerate() {
            let mrow = row % mrows;
            let in_row = &tl.data()[row * cols..(row + 1) * cols];
            let mut max = T::neg_infinity();
            for c in 0..cols {
                if mask.allowed(mrow, c) && in_row[c] > max {
                    max = in_row[c];
                }
            }
            let mut sum = T::zero();
            for c in 0..cols {
                if mask.allowed(mrow, c) {
                    let e = (in_row[c] - max).exp();
                    out_row[c] = e;
                    sum += e;
                }
            }
            for c in 0..cols {
                if mask.allowed(mrow, c) {
                    out_row[c] = out_row[c] / sum;
                }
            }
        }
        let t = Tensor::from_vec(&shape, data)?;
        t.ensure_finite("masked_softmax")?;
        Ok(self.push(t, Op::MaskedSoftmax { logits, mask }))
    }

    /// Mean over rows of -log softmax(logits)[target].
    pub fn cross_entropy(&mut self, logits: Var, targets: Arc<Vec<usize>>) -> Result<Var> {
        let tl = self.value(logits);
        let (rows, cols) = (tl.rows(), tl.cols());
        if targets.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{} logit rows vs {} targets", rows, targets.len()),
            });
        }
        for &t in targets.iter() {
            if t >= cols {
                return Err(Error::IndexOutOfRange { op: "cross_entropy", index: t, bound: cols });
            }
        }
        let mut probs = vec![T::zero(); rows * cols];
        let losses: Vec<T> = probs
            .par_chunks_mut(cols)
            .enumerate()
            .map(|(r, prow)| {
                let in_row = &tl.data()[r * cols..(r + 1) * cols];
                let mut max = T::neg_infinity();
                for &v in in_row {
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = T::zero();
                for (p, &v) in prow.iter_mut().zip(in_row) {
                    let e = (v - max).exp();
                    *p = e;
                    sum += e;
                }
                let inv = T::one() / sum;
                for p in prow.iter_mut() {
                    *p = *p * inv;
                }
                sum.ln() - (in_row[targets[r]] - max)
            })
            .collect();
        let n = T::from_f64(rows as f64);
        let loss = losses.into_iter().sum::<T>() / n;
        let probs = Tensor::from_vec(&[rows, cols], probs)?;
        probs.ensure_finite("cross_entropy")?;
        let t = Tensor::scalar(loss);
        t.ensure_finite("cross_entropy")?;
        Ok(self.push(t, Op::CrossEntropy { logits, targets, probs }))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        let t = Tensor::scalar(s);
        t.ensure_finite("sum_all")?;
        Ok(self.push(t, Op::SumAll { a }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape { a }))
    }

    /// Gradients of a scalar root w.r.t. every reachable node. Leaves that do
    /// not influence the root get zero gradients on read.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if !self.value(root).is_scalar() {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for id in (0..=root.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g); // retain for the caller
                }
                Op::MatMul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    {
                        let ga = ensure(&mut grads, a.0, m * k);
                        matmul_nt(&g, tb.data(), m, n, k, ga);
                    }
                    let gb = ensure(&mut grads, b.0, k * n);
                    matmul_tn(ta.data(), &g, k, m, n, gb);
                }
                Op::BmmNt { a, b } => {
                    // out[B,r,s]; a[B,r,d]; b[B,s,d]
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (bsz, r, d) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                    let s = tb.shape()[1];
                    {
                        let ga = ensure(&mut grads, a.0, bsz * r * d);
                        ga.par_chunks_mut(r * d).enumerate().for_each(|(i, o)| {
                            matmul_nn(
                                &g[i * r * s..(i + 1) * r * s],
                                &tb.data()[i * s * d..(i + 1) * s * d],
                                r,
                                s,
                                d,
                                o,
                            );
                        });
                    }
                    let gb = ensure(&mut grads, b.0, bsz * s * d);
                    gb.par_chunks_mut(s * d).enumerate().for_each(|(i, o)| {
                        matmul_tn(
                            &g[i * r * s..(i + 1) * r * s],
                            &ta.data()[i * r * d..(i + 1) * r * d],
                            s,
                            r,
                            d,
                            o,
                        );
                    });
                }
                Op::BmmNn { a, b } => {
                    // out[B,r,d]; a[B,r,s]; b[B,s,d]
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (bsz, r, s) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                    let d = tb.shape()[2];
                    {
                        let ga = ensure(&mut grads, a.0, bsz * r * s);
                        ga.par_chunks_mut(r * s).enumerate().for_each(|(i, o)| {
                            matmul_nt(
                                &g[i * r * d..(i + 1) * r * d],
                                &tb.data()[i * s * d..(i + 1) * s * d],
                                r,
                                d,
                                s,
                                o,
                            );
                        });
                    }
                    let gb = ensure(&mut grads, b.0, bsz * s * d);
                    gb.par_chunks_mut(s * d).enumerate().for_each(|(i, o)| {
                        matmul_tn(
                            &ta.data()[i * r * s..(i + 1) * r * s],
                            &g[i * r * d..(i + 1) * r * d],
                            s,
                            r,
                            d,
                            o,
                        );
                    });
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a.0, &g);
                    accumulate(&mut grads, b.0, &g);
                }
                Op::Scale { a, c } => {
                    let scaled: Vec<T> = g.iter().map(|&x| x * *c).collect();
                    accumulate(&mut grads, a.0, &scaled);
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga: Vec<T> = g.iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads, a.0, &ga);
                    let gb: Vec<T> = g.iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads, b.0, &gb);
                }
                Op::GatherRows { table, ids } => {
                    let tt = self.value(*table);
                    let cols = tt.cols();
                    let gt = ensure(&mut grads, table.0, tt.numel());
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g[i * cols..(i + 1) * cols];
                        let dst = &mut gt[id * cols..(id + 1) * cols];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Op::InterleaveRows { a, b, from_a } => {
                    let cols = self.value(*a).cols();
                    let na = self.value(*a).rows();
                    let nb = self.value(*b).rows();
                    let mut ga = vec![T::zero(); na * cols];
                    let mut gb = vec![T::zero(); nb * cols];
                    let (mut ia, mut ib) = (0usize, 0usize);
                    for (r, &fa) in from_a.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        if fa {
                            ga[ia * cols..(ia + 1) * cols].copy_from_slice(src);
                            ia += 1;
                        } else {
                            gb[ib * cols..(ib + 1) * cols].copy_from_slice(src);
                            ib += 1;
                        }
                    }
                    accumulate(&mut grads, a.0, &ga);
                    accumulate(&mut grads, b.0, &gb);
                }
                Op::MaskedSoftmax { logits, mask } => {
                    let y = &node.value;
                    let cols = mask.cols;
                    let nrows = y.numel() / cols;
                    let mut gl = vec![T::zero(); y.numel()];
                    for r in 0..nrows {
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dotgy: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        let out = &mut gl[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            // masked entries have y == 0, so their grad is 0
                            out[c] = yr[c] * (gr[c] - dotgy);
                        }
                    }
                    accumulate(&mut grads, logits.0, &gl);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let gl_scale = g[0] / T::from_f64(targets.len() as f64);
                    let cols = probs.cols();
                    let mut gl: Vec<T> = probs.data().iter().map(|&p| p * gl_scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        gl[r * cols + t] = gl[r * cols + t] - gl_scale;
                    }
                    accumulate(&mut grads, logits.0, &gl);
                }
                Op::SumAll { a } => {
                    let n = self.value(*a).numel();
                    let spread = vec![g[0]; n];
                    accumulate(&mut grads, a.0, &spread);
                }
                Op::Reshape { a } => {
                    accumulate(&mut grads, a.0, &g);
                }
            }
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }
}

fn ensure<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], id: usize, len: usize) -> &'a mut Vec<T> {
    if grads[id].is_none() {
        grads[id] = Some(vec![T::zero(); len]);
    }
    grads[id].as_mut().unwrap()
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    let dst = ensure(grads, id, g.len());
    for (d, &s) in dst.iter_mut().zip(g) {
        *d += s;
    }
}

/// Gradients keyed by tape node; untouched nodes read as zeros.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => Tensor::from_vec(&self.shapes[v.0], g.clone()).unwrap(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get_slice(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}
