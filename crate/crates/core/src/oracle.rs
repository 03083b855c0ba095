//! Reference evaluator built from nested vectors and explicit index loops.
//!
//! Shares no code path with [`crate::autodiff`] or the tensor kernels; test
//! suites compare the tape-based model against it.

#![allow(clippy::needless_range_loop)]

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{AttentionParams, FfnParams, LayerNormParams};
use crate::encoder::{BlockParams, HassEncoderParams};
use crate::model::{ClassifierParams, Model};
use crate::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = (t.dims()[0], t.dims()[1]);
    (0..r).map(|i| (0..c).map(|j| t.data()[i * c + j]).collect()).collect()
}

fn vector(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (p, q, r) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; r]; p];
    for i in 0..p {
        assert_eq!(a[i].len(), q);
        for j in 0..r {
            let mut s = 0.0;
            for k in 0..q {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// `W x + b 1ᵀ`.
fn affine(w: &Tensor, b: &Tensor, x: &Mat) -> Mat {
    let mut y = matmul(&to_mat(w), x);
    let b = vector(b);
    for (row, bi) in y.iter_mut().zip(b) {
        for v in row.iter_mut() {
            *v += bi;
        }
    }
    y
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Multi-head attention with `Q = K = V = x`; returns the output and each head's weights.
pub fn attention(x: &Mat, p: &AttentionParams) -> (Mat, Vec<Mat>) {
    let m = p.heads.len();
    let dk = x.len();
    let n = x[0].len();
    let scale = libm::sqrt(dk as f64 / m as f64);
    let mut stacked: Mat = Vec::new();
    let mut weights = Vec::new();
    for h in &p.heads {
        let q = affine(&h.wq, &h.bq, x);
        let k = affine(&h.wk, &h.bk, x);
        let v = affine(&h.wv, &h.bv, x);
        // A[i][j] = softmax_j(q_iᵀ k_j / scale)
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..q.len()).map(|r| q[r][i] * k[r][j]).sum::<f64>() / scale)
                .collect();
            a[i] = softmax(&scores);
        }
        // head output = V Aᵀ
        let head = matmul(&v, &transpose(&a));
        stacked.extend(head);
        weights.push(a);
    }
    (affine(&p.wo, &p.bo, &stacked), weights)
}

pub fn ffn(x: &Mat, p: &FfnParams) -> Mat {
    let mut h = affine(&p.w1, &p.b1, x);
    for row in h.iter_mut() {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }
    affine(&p.w2, &p.b2, &h)
}

/// Column-wise layer normalization with population variance.
pub fn layer_norm(x: &Mat, p: &LayerNormParams) -> Mat {
    let d = x.len();
    let n = x[0].len();
    let g = vector(&p.gain);
    let b = vector(&p.bias);
    let mut y = vec![vec![0.0; n]; d];
    for j in 0..n {
        let mean = (0..d).map(|i| x[i][j]).sum::<f64>() / d as f64;
        let var = (0..d).map(|i| (x[i][j] - mean) * (x[i][j] - mean)).sum::<f64>() / d as f64;
        let denom = libm::sqrt(var + p.eps);
        for i in 0..d {
            y[i][j] = g[i] * (x[i][j] - mean) / denom + b[i];
        }
    }
    y
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn block(x: &Mat, p: &BlockParams) -> Mat {
    let (da, _) = attention(x, &p.attn);
    let f = layer_norm(&add(x, &da), &p.ln1);
    layer_norm(&add(&f, &ffn(&f, &p.ffn)), &p.ln2)
}

/// `x[(t·D + d)][c] = I[c][t][d]`.
pub fn channel_tokens(input: &Tensor) -> Mat {
    let (c, t, d) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let mut x = vec![vec![0.0; c]; t * d];
    for ci in 0..c {
        for ti in 0..t {
            for di in 0..d {
                x[ti * d + di][ci] = input.at3(ci, ti, di);
            }
        }
    }
    x
}

fn from_channel_tokens(x: &Mat, c: usize, t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; c * t * d];
    for ci in 0..c {
        for ti in 0..t {
            for di in 0..d {
                data[(ci * t + ti) * d + di] = x[ti * d + di][ci];
            }
        }
    }
    Tensor::new(&[c, t, d], data).unwrap()
}

/// `x[(c·D + d)][t] = I[c][t][d]`.
pub fn time_tokens(input: &Tensor) -> Mat {
    let (c, t, d) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let mut x = vec![vec![0.0; t]; c * d];
    for ci in 0..c {
        for ti in 0..t {
            for di in 0..d {
                x[ci * d + di][ti] = input.at3(ci, ti, di);
            }
        }
    }
    x
}

fn from_time_tokens(x: &Mat, c: usize, t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; c * t * d];
    for ci in 0..c {
        for ti in 0..t {
            for di in 0..d {
                data[(ci * t + ti) * d + di] = x[ci * d + di][ti];
            }
        }
    }
    Tensor::new(&[c, t, d], data).unwrap()
}

pub fn intra_block(input: &Tensor, p: &HassEncoderParams) -> Tensor {
    let (c, t, d) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    from_channel_tokens(&block(&channel_tokens(input), &p.intra), c, t, d)
}

pub fn inter_block(input: &Tensor, p: &HassEncoderParams) -> Tensor {
    let (c, t, d) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    from_time_tokens(&block(&time_tokens(input), &p.inter), c, t, d)
}

pub fn encode(input: &Tensor, p: &HassEncoderParams) -> Tensor {
    inter_block(&intra_block(input, p), p)
}

pub fn logits(model: &Model, input: &Tensor) -> [f64; 5] {
    let features = match &model.encoder {
        Some(e) => encode(input, e),
        None => input.clone(),
    };
    let mut out = [0.0; 5];
    match &model.head {
        ClassifierParams::Linear { w, b } => {
            let cols = features.numel();
            for k in 0..5 {
                let mut s = b.data()[k];
                for i in 0..cols {
                    s += w.data()[k * cols + i] * features.data()[i];
                }
                out[k] = s;
            }
        }
        ClassifierParams::TinyConv {
            kernel,
            conv_w,
            conv_b,
            out_w,
            out_b,
        } => {
            let rows = time_tokens(&features);
            let (cd, t) = (rows.len(), rows[0].len());
            let len = t - kernel + 1;
            let filters = conv_w.dims()[0];
            let width = cd * kernel;
            let mut pooled = vec![0.0; filters];
            for f in 0..filters {
                for s in 0..len {
                    let mut acc = conv_b.data()[f];
                    for ch in 0..cd {
                        for j in 0..*kernel {
                            acc += conv_w.data()[f * width + ch * kernel + j] * rows[ch][s + j];
                        }
                    }
                    pooled[f] += acc.max(0.0) / len as f64;
                }
            }
            for k in 0..5 {
                out[k] = out_b.data()[k]
                    + (0..filters)
                        .map(|f| out_w.data()[k * filters + f] * pooled[f])
                        .sum::<f64>();
            }
        }
    }
    out
}
