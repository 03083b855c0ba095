//! Recorded operation tape with exact reverse-mode gradients.
//!
//! Every forward operation appends a node holding its value plus whatever it
//! needs for the backward rule. [`Tape::backward`] walks the nodes in reverse
//! and accumulates vector-Jacobian products into fresh buffers.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{self, Shape, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    SoftmaxRows(usize),
    Relu(usize),
    LayerNormCols {
        x: usize,
        gain: usize,
        bias: usize,
        stats: Vec<(f64, f64)>,
    },
    ConcatRows(Vec<usize>),
    Im2Col(usize, usize),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a borrowed tensor whose gradient will be tracked.
    pub fn leaf(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn leaf_owned(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Registers an input that needs no gradient.
    pub fn constant(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    /// Tracked leaves in registration order.
    pub fn tracked_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(index, _)| Var { tape: self.id, index })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn node_value(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    fn val(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, index }
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.val(ia).matmul(self.val(ib))?;
        Ok(self.record(out, Op::MatMul(ia, ib), &[ia, ib]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).transpose()?;
        Ok(self.record(out, Op::Transpose(ia), &[ia]))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).reshape(dims)?;
        Ok(self.record(out, Op::Reshape(ia), &[ia]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.val(ia).add(self.val(ib))?;
        Ok(self.record(out, Op::Add(ia, ib), &[ia, ib]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.val(ia).mul(self.val(ib))?;
        Ok(self.record(out, Op::Mul(ia, ib), &[ia, ib]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let out = self.val(ix).add_bias(self.val(ib))?;
        Ok(self.record(out, Op::AddBias(ix, ib), &[ix, ib]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).scale(factor);
        Ok(self.record(out, Op::Scale(ia, factor), &[ia]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).softmax_rows()?;
        Ok(self.record(out, Op::SoftmaxRows(ia), &[ia]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).relu();
        Ok(self.record(out, Op::Relu(ia), &[ia]))
    }

    /// Normalizes every column of a `d×N` matrix, then applies `gain`/`bias` row-wise.
    pub fn layer_norm_cols(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let xv = self.val(ix);
        let out = xv.layer_norm_cols(self.val(ig), self.val(ib), eps)?;
        let (d, n) = xv.shape().as_matrix().expect("checked by layer_norm_cols");
        let stats = tensor::column_stats(xv.data(), d, n, eps);
        Ok(self.record(
            out,
            Op::LayerNormCols {
                x: ix,
                gain: ig,
                bias: ib,
                stats,
            },
            &[ix, ig, ib],
        ))
    }

    /// Layer normalization of a rank-1 vector.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.value(x)?.numel();
        let col = self.reshape(x, &[d, 1])?;
        let y = self.layer_norm_cols(col, gain, bias, eps)?;
        self.reshape(y, &[d])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = idx.iter().map(|&i| self.val(i)).collect();
        let out = Tensor::concat_rows(&refs)?;
        let inputs = idx.clone();
        Ok(self.record(out, Op::ConcatRows(idx), &inputs))
    }

    pub fn im2col(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).im2col(kernel)?;
        Ok(self.record(out, Op::Im2Col(ix, kernel), &[ix]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = Tensor::scalar(self.val(ia).sum());
        Ok(self.record(out, Op::Sum(ia), &[ia]))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits` (`B×K`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.check(logits)?;
        let lv = self.val(il);
        let (b, k) = lv.shape().as_matrix().ok_or(Error::RankMismatch {
            op: "cross_entropy",
            expected: 2,
            found: lv.shape(),
        })?;
        if b == 0 || labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if labels.len() != b {
            return Err(Error::LabelCount {
                labels: labels.len(),
                batch: b,
            });
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::InvalidConfig("label index exceeds class count"));
        }
        let (loss, probs) = cross_entropy_forward(lv, labels);
        Ok(self.record(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            &[il],
        ))
    }

    /// Gradients of the single-element `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.check(output)?;
        let shape = self.val(out).shape();
        if shape.numel() != 1 {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Tensor::from_shape(shape, vec![1.0]).expect("single element"));

        for i in (0..=out).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let av = self.val(a);
                let bv = self.val(b);
                let (p, q) = av.shape().as_matrix().unwrap();
                let r = bv.dims()[1];
                if self.wants(a) {
                    let da = slot(grads, a, av.shape());
                    tensor::matmul_nt_into(gd, bv.data(), da, p, r, q);
                }
                if self.wants(b) {
                    let db = slot(grads, b, bv.shape());
                    tensor::matmul_tn_into(av.data(), gd, db, q, p, r);
                }
            }
            &Op::Transpose(a) => {
                if self.wants(a) {
                    let back = g.transpose().expect("transposed shape");
                    add_into(slot(grads, a, self.val(a).shape()), back.data());
                }
            }
            &Op::Reshape(a) => {
                if self.wants(a) {
                    add_into(slot(grads, a, self.val(a).shape()), gd);
                }
            }
            &Op::Add(a, b) => {
                for x in [a, b] {
                    if self.wants(x) {
                        add_into(slot(grads, x, self.val(x).shape()), gd);
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (x, other) in [(a, b), (b, a)] {
                    if self.wants(x) {
                        let ov = self.val(other).data();
                        let dx = slot(grads, x, self.val(x).shape());
                        for ((d, &gv), &o) in dx.iter_mut().zip(gd).zip(ov) {
                            *d += gv * o;
                        }
                    }
                }
            }
            &Op::AddBias(x, b) => {
                if self.wants(x) {
                    add_into(slot(grads, x, self.val(x).shape()), gd);
                }
                if self.wants(b) {
                    let n = g.dims()[1];
                    let db = slot(grads, b, self.val(b).shape());
                    for (d, row) in db.iter_mut().zip(gd.chunks_exact(n)) {
                        *d += row.iter().sum::<f64>();
                    }
                }
            }
            &Op::Scale(a, factor) => {
                if self.wants(a) {
                    let da = slot(grads, a, self.val(a).shape());
                    for (d, &gv) in da.iter_mut().zip(gd) {
                        *d += factor * gv;
                    }
                }
            }
            &Op::SoftmaxRows(a) => {
                if self.wants(a) {
                    let y = self.val(i);
                    let n = y.dims()[1];
                    let da = slot(grads, a, self.val(a).shape());
                    for ((drow, yrow), grow) in da
                        .chunks_exact_mut(n)
                        .zip(y.data().chunks_exact(n))
                        .zip(gd.chunks_exact(n))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for ((d, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            &Op::Relu(a) => {
                if self.wants(a) {
                    let xv = self.val(a).data();
                    let da = slot(grads, a, self.val(a).shape());
                    for ((d, &gv), &x) in da.iter_mut().zip(gd).zip(xv) {
                        if x > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::LayerNormCols { x, gain, bias, stats } => self.layer_norm_backward(*x, *gain, *bias, stats, gd, grads),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.val(p).numel();
                    if self.wants(p) {
                        add_into(slot(grads, p, self.val(p).shape()), &gd[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            &Op::Im2Col(x, kernel) => {
                if self.wants(x) {
                    let xs = self.val(x).shape();
                    let (c, t) = xs.as_matrix().unwrap();
                    let len = t - kernel + 1;
                    let dx = slot(grads, x, xs);
                    for ci in 0..c {
                        for j in 0..kernel {
                            let src = &gd[(ci * kernel + j) * len..(ci * kernel + j + 1) * len];
                            add_into(&mut dx[ci * t + j..ci * t + j + len], src);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if self.wants(a) {
                    let s = gd[0];
                    slot(grads, a, self.val(a).shape()).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if self.wants(*logits) {
                    let k = probs.dims()[1];
                    let scale = gd[0] / labels.len() as f64;
                    let dl = slot(grads, *logits, probs.shape());
                    for (b, (drow, prow)) in dl.chunks_exact_mut(k).zip(probs.data().chunks_exact(k)).enumerate() {
                        for (c, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                            let target = if c == labels[b] { 1.0 } else { 0.0 };
                            *d += scale * (p - target);
                        }
                    }
                }
            }
        }
    }

    fn layer_norm_backward(
        &self,
        x: usize,
        gain: usize,
        bias: usize,
        stats: &[(f64, f64)],
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let xv = self.val(x);
        let gv = self.val(gain).data();
        let (d, n) = xv.shape().as_matrix().unwrap();
        let xhat = |r: usize, c: usize| (xv.data()[r * n + c] - stats[c].0) * stats[c].1;

        if self.wants(bias) {
            let db = slot(grads, bias, self.val(bias).shape());
            for (r, dbr) in db.iter_mut().enumerate() {
                *dbr += gd[r * n..(r + 1) * n].iter().sum::<f64>();
            }
        }
        if self.wants(gain) {
            let dg = slot(grads, gain, self.val(gain).shape());
            for (r, dgr) in dg.iter_mut().enumerate() {
                *dgr += (0..n).map(|c| gd[r * n + c] * xhat(r, c)).sum::<f64>();
            }
        }
        if self.wants(x) {
            let dx = slot(grads, x, xv.shape());
            for c in 0..n {
                let inv_std = stats[c].1;
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_xhat = 0.0;
                for r in 0..d {
                    let dxh = gd[r * n + c] * gv[r];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat(r, c);
                }
                mean_dxhat /= d as f64;
                mean_dxhat_xhat /= d as f64;
                for r in 0..d {
                    let dxh = gd[r * n + c] * gv[r];
                    dx[r * n + c] += inv_std * (dxh - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
                }
            }
        }
    }

    fn wants(&self, index: usize) -> bool {
        self.nodes[index].requires_grad
    }
}

fn slot(grads: &mut [Option<Tensor>], index: usize, shape: Shape) -> &mut [f64] {
    grads[index]
        .get_or_insert_with(|| Tensor::zeros_like_shape(shape))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Returns the mean loss and the row-wise softmax probabilities.
pub(crate) fn cross_entropy_forward(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let k = logits.dims()[1];
    let mut probs = logits.data().to_vec();
    let mut total = 0.0;
    for (row, &label) in probs.chunks_exact_mut(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        total += lse - row[label];
        tensor::softmax_in_place(row);
    }
    let probs = Tensor::from_shape(logits.shape(), probs).expect("same shape");
    (total / labels.len() as f64, probs)
}

/// Result of [`Tape::backward`]; one buffer per node that received gradient.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the output does not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape<'_>, var: Var) -> Result<Tensor> {
        let shape = tape.value(var)?.shape();
        Ok(self
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like_shape(shape)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::new(&[2, 3], alloc::vec![0.5, -1.0, 2.0, 3.0, 0.0, 7.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let s = tape.sum(xv).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(xv).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::vector(alloc::vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(xv).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_foreign_and_non_scalar() {
        let x = Tensor::vector(alloc::vec![1.0, 2.0]).unwrap();
        let mut a = Tape::new();
        let mut b = Tape::new();
        let xa = a.leaf(&x);
        let sa = a.sum(xa).unwrap();
        let _ = b.leaf(&x);
        assert_eq!(b.backward(sa).err(), Some(Error::ForeignVar));
        assert!(matches!(a.backward(xa), Err(Error::NotScalar(_))));
        assert!(b.sum(xa).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let x = Tensor::vector(alloc::vec![1.0, 2.0]).unwrap();
        let c = Tensor::vector(alloc::vec![3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let cv = tape.constant(&c);
        let p = tape.mul(xv, cv).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(xv).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(cv).is_none());
    }

    #[test]
    fn backward_is_repeatable() {
        let x = Tensor::from_rows(&[&[0.3, -0.2], &[1.1, 0.4]]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let sm = tape.softmax_rows(xv).unwrap();
        let sq = tape.mul(sm, xv).unwrap();
        let s = tape.sum(sq).unwrap();
        let g1 = tape.backward(s).unwrap();
        let g2 = tape.backward(s).unwrap();
        assert_eq!(g1.get(xv), g2.get(xv));
    }

    #[test]
    fn cross_entropy_uniform_is_ln5() {
        let z = Tensor::zeros(&[3, 5]).unwrap();
        let (loss, _) = cross_entropy_forward(&z, &[0, 3, 4]);
        assert!(libm::fabs(loss - libm::log(5.0)) < 1e-15);
    }
}
