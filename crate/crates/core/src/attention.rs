//! Multi-head dot-product attention, the two-layer feed-forward network and
//! layer-norm parameters.
//!
//! Matrices follow the column-token layout: an input with `N` tokens of
//! embedding width `d` is a `d×N` matrix and every projection is applied from
//! the left, `W·X + b·1ᵀ`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamVisitor;
use crate::rng::glorot_uniform;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Query/key/value projections of one attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadProjection {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
}

/// Parameters of one attention layer: per-head query/key projections,
/// per-head value projections and the shared output map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadProjection>,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionParams {
    /// Validates extents against `key_dim` (`d_k`) and `value_dim` (`d_v`).
    pub fn new(heads: Vec<HeadProjection>, wo: Tensor, bo: Tensor) -> Result<Self> {
        let m = heads.len();
        if m == 0 {
            return Err(Error::InvalidConfig("attention needs at least one head"));
        }
        let key_dim = heads[0].wq.dims().get(1).copied().unwrap_or(0);
        let value_dim = heads[0].wv.dims().get(1).copied().unwrap_or(0);
        check_heads("key", key_dim, m)?;
        check_heads("value", value_dim, m)?;
        let (hk, hv) = (key_dim / m, value_dim / m);
        for h in &heads {
            expect_dims(&h.wq, &[hk, key_dim])?;
            expect_dims(&h.bq, &[hk])?;
            expect_dims(&h.wk, &[hk, key_dim])?;
            expect_dims(&h.bk, &[hk])?;
            expect_dims(&h.wv, &[hv, value_dim])?;
            expect_dims(&h.bv, &[hv])?;
        }
        expect_dims(&wo, &[value_dim, value_dim])?;
        expect_dims(&bo, &[value_dim])?;
        Ok(Self { heads, wo, bo })
    }

    /// Glorot-initialized weights and zero biases with `d_k = d_v = dim`.
    pub fn init(dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        check_heads("key", dim, heads)?;
        let hd = dim / heads;
        let mut projections = Vec::with_capacity(heads);
        for _ in 0..heads {
            projections.push(HeadProjection {
                wq: glorot_uniform(hd, dim, rng)?,
                bq: Tensor::zeros(&[hd])?,
                wk: glorot_uniform(hd, dim, rng)?,
                bk: Tensor::zeros(&[hd])?,
                wv: glorot_uniform(hd, dim, rng)?,
                bv: Tensor::zeros(&[hd])?,
            });
        }
        let wo = glorot_uniform(dim, dim, rng)?;
        Self::new(projections, wo, Tensor::zeros(&[dim])?)
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn key_dim(&self) -> usize {
        self.heads[0].wq.dims()[1]
    }

    pub fn value_dim(&self) -> usize {
        self.heads[0].wv.dims()[1]
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> AttentionVars {
        let heads = self
            .heads
            .iter()
            .map(|h| HeadVars {
                wq: tape.leaf(&h.wq),
                bq: tape.leaf(&h.bq),
                wk: tape.leaf(&h.wk),
                bk: tape.leaf(&h.bk),
                wv: tape.leaf(&h.wv),
                bv: tape.leaf(&h.bv),
            })
            .collect();
        AttentionVars {
            heads,
            wo: tape.leaf(&self.wo),
            bo: tape.leaf(&self.bo),
            key_dim: self.key_dim(),
            value_dim: self.value_dim(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl ParamVisitor<'a>) {
        for (n, h) in self.heads.iter().enumerate() {
            f.visit(format!("{prefix}.wq.{n}"), &h.wq);
            f.visit(format!("{prefix}.bq.{n}"), &h.bq);
            f.visit(format!("{prefix}.wk.{n}"), &h.wk);
            f.visit(format!("{prefix}.bk.{n}"), &h.bk);
            f.visit(format!("{prefix}.wv.{n}"), &h.wv);
            f.visit(format!("{prefix}.bv.{n}"), &h.bv);
        }
        f.visit(format!("{prefix}.wo"), &self.wo);
        f.visit(format!("{prefix}.bo"), &self.bo);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        for (n, h) in self.heads.iter_mut().enumerate() {
            f(format!("{prefix}.wq.{n}"), &mut h.wq);
            f(format!("{prefix}.bq.{n}"), &mut h.bq);
            f(format!("{prefix}.wk.{n}"), &mut h.wk);
            f(format!("{prefix}.bk.{n}"), &mut h.bk);
            f(format!("{prefix}.wv.{n}"), &mut h.wv);
            f(format!("{prefix}.bv.{n}"), &mut h.bv);
        }
        f(format!("{prefix}.wo"), &mut self.wo);
        f(format!("{prefix}.bo"), &mut self.bo);
    }
}

fn check_heads(block: &'static str, dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::HeadDivisibility { block, dim, heads });
    }
    Ok(())
}

pub(crate) fn expect_dims(t: &Tensor, dims: &[usize]) -> Result<()> {
    if t.dims() != dims {
        return Err(Error::ShapeMismatch {
            op: "parameter",
            left: t.shape(),
            right: Shape::new(dims)?,
        });
    }
    Ok(())
}

pub struct HeadVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
}

pub struct AttentionVars {
    pub heads: Vec<HeadVars>,
    pub wo: Var,
    pub bo: Var,
    key_dim: usize,
    value_dim: usize,
}

/// Output of one attention call plus each head's `N×N` weight matrix.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Multi-head dot-product attention over column tokens.
///
/// Each head projects `Q`, `K`, `V` to width `d/m`, forms
/// `A = softmax_rows(Q_hᵀ K_h / sqrt(d_k / m))` and emits `V_h Aᵀ`. The head
/// outputs are stacked in head order and mapped through `W_O`, `b_O`.
pub fn dot_product_attention(
    tape: &mut Tape<'_>,
    query: Var,
    key: Var,
    value: Var,
    params: &AttentionVars,
) -> Result<AttentionOutput> {
    let qs = tape.value(query)?.shape();
    let ks = tape.value(key)?.shape();
    let vs = tape.value(value)?.shape();
    let (dq, nq) = qs.as_matrix().ok_or(Error::RankMismatch {
        op: "attention",
        expected: 2,
        found: qs,
    })?;
    let (dk, nk) = ks.as_matrix().ok_or(Error::ShapeMismatch {
        op: "attention",
        left: qs,
        right: ks,
    })?;
    let (dv, nv) = vs.as_matrix().ok_or(Error::ShapeMismatch {
        op: "attention",
        left: qs,
        right: vs,
    })?;
    if nq != nk || nq != nv || dq != dk || dq != params.key_dim {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: qs,
            right: ks,
        });
    }
    if dv != params.value_dim {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: qs,
            right: vs,
        });
    }

    let m = params.heads.len();
    let inv_scale = 1.0 / libm::sqrt(params.key_dim as f64 / m as f64);
    let mut stacked = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for h in &params.heads {
        let q = tape.matmul(h.wq, query)?;
        let q = tape.add_bias(q, h.bq)?;
        let k = tape.matmul(h.wk, key)?;
        let k = tape.add_bias(k, h.bk)?;
        let v = tape.matmul(h.wv, value)?;
        let v = tape.add_bias(v, h.bv)?;

        let qt = tape.transpose(q)?;
        let scores = tape.matmul(qt, k)?;
        let scores = tape.scale(scores, inv_scale)?;
        let a = tape.softmax_rows(scores)?;
        let at = tape.transpose(a)?;
        stacked.push(tape.matmul(v, at)?);
        weights.push(a);
    }
    let concat = tape.concat_rows(&stacked)?;
    let out = tape.matmul(params.wo, concat)?;
    let output = tape.add_bias(out, params.bo)?;
    Ok(AttentionOutput { output, weights })
}

/// Two dense layers with a rectifier between them.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FfnParams {
    pub fn new(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        let (hidden, dim) = w1.shape().as_matrix().ok_or(Error::RankMismatch {
            op: "ffn",
            expected: 2,
            found: w1.shape(),
        })?;
        expect_dims(&b1, &[hidden])?;
        expect_dims(&w2, &[dim, hidden])?;
        expect_dims(&b2, &[dim])?;
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn init(dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("feed-forward extents must be at least 1"));
        }
        let w1 = glorot_uniform(hidden, dim, rng)?;
        let w2 = glorot_uniform(dim, hidden, rng)?;
        Self::new(w1, Tensor::zeros(&[hidden])?, w2, Tensor::zeros(&[dim])?)
    }

    pub fn dim(&self) -> usize {
        self.w1.dims()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w1.dims()[0]
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> FfnVars {
        FfnVars {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl ParamVisitor<'a>) {
        f.visit(format!("{prefix}.w1"), &self.w1);
        f.visit(format!("{prefix}.b1"), &self.b1);
        f.visit(format!("{prefix}.w2"), &self.w2);
        f.visit(format!("{prefix}.b2"), &self.b2);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
    }
}

pub struct FfnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `W2·relu(W1·x + b1·1ᵀ) + b2·1ᵀ`, column by column.
pub fn ffn(tape: &mut Tape<'_>, x: Var, params: &FfnVars) -> Result<Var> {
    let h = tape.matmul(params.w1, x)?;
    let h = tape.add_bias(h, params.b1)?;
    let h = tape.relu(h)?;
    let y = tape.matmul(params.w2, h)?;
    tape.add_bias(y, params.b2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn identity(dim: usize) -> Result<Self> {
        Ok(Self {
            gain: Tensor::filled(&[dim], 1.0)?,
            bias: Tensor::zeros(&[dim])?,
            eps: DEFAULT_LN_EPS,
        })
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> LayerNormVars {
        LayerNormVars {
            gain: tape.leaf(&self.gain),
            bias: tape.leaf(&self.bias),
            eps: self.eps,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl ParamVisitor<'a>) {
        f.visit(format!("{prefix}.gain"), &self.gain);
        f.visit(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.gain"), &mut self.gain);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

pub struct LayerNormVars {
    pub gain: Var,
    pub bias: Var,
    pub eps: f64,
}

impl LayerNormVars {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.layer_norm_cols(x, self.gain, self.bias, self.eps)
    }
}
