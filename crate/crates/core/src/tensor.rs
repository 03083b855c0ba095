//! Dense row-major arrays of rank 1 to 3.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Extents of a [`Tensor`], up to three axes. The last axis is contiguous.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 3],
    rank: u8,
}

impl Shape {
    pub const MAX_RANK: usize = 3;

    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > Self::MAX_RANK {
            return Err(Error::InvalidShape("rank must be between 1 and 3"));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape("extents must be at least 1"));
        }
        let mut out = [1usize; 3];
        out[..dims.len()].copy_from_slice(dims);
        Ok(Self {
            dims: out,
            rank: dims.len() as u8,
        })
    }

    pub fn scalar() -> Self {
        Self {
            dims: [1, 1, 1],
            rank: 1,
        }
    }

    pub fn matrix(rows: usize, cols: usize) -> Result<Self> {
        Self::new(&[rows, cols])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// `(rows, cols)` for a rank-2 shape.
    pub fn as_matrix(&self) -> Option<(usize, usize)> {
        (self.rank == 2).then(|| (self.dims[0], self.dims[1]))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.dims().iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape("element count does not match shape"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Ok(Self::zeros_like_shape(shape))
    }

    pub(crate) fn zeros_like_shape(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Ok(Self {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn at2(&self, row: usize, col: usize) -> f64 {
        let (_, cols) = self.matrix_dims();
        self.data[row * cols + col]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        let d = self.shape.dims();
        self.data[(i * d[1] + j) * d[2] + k]
    }

    fn matrix_dims(&self) -> (usize, usize) {
        self.shape
            .as_matrix()
            .expect("matrix accessor on a tensor that is not rank 2")
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        self.shape.as_matrix().ok_or(Error::RankMismatch {
            op,
            expected: 2,
            found: self.shape,
        })
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (p, q) = self.require_matrix("matmul")?;
        let (q2, r) = rhs.require_matrix("matmul")?;
        if q != q2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape,
                right: rhs.shape,
            });
        }
        let mut out = vec![0.0; p * r];
        matmul_into(&self.data, &rhs.data, &mut out, p, q, r);
        Tensor::new(&[p, r], out)
    }

    /// Swaps the last two axes. Rank-3 tensors are treated as a stack of matrices.
    pub fn transpose(&self) -> Result<Tensor> {
        let (batch, rows, cols) = match self.dims() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            _ => {
                return Err(Error::RankMismatch {
                    op: "transpose",
                    expected: 2,
                    found: self.shape,
                })
            }
        };
        let mut out = vec![0.0; self.numel()];
        for b in 0..batch {
            let src = &self.data[b * rows * cols..(b + 1) * rows * cols];
            let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
            transpose_into(src, dst, rows, cols);
        }
        let dims: Vec<usize> = if self.shape.rank() == 2 {
            vec![cols, rows]
        } else {
            vec![batch, cols, rows]
        };
        Tensor::new(&dims, out)
    }

    /// Adds `bias` to every column of a `d×N` matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (d, n) = self.require_matrix("add_bias")?;
        if bias.dims() != [d] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: self.shape,
                right: bias.shape,
            });
        }
        let mut out = self.data.clone();
        for (row, b) in out.chunks_exact_mut(n).zip(&bias.data) {
            row.iter_mut().for_each(|v| *v += b);
        }
        Tensor::new(&[d, n], out)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    fn zip_with(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: rhs.shape,
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor::from_shape(self.shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Row-wise softmax of a matrix, with the row maximum subtracted first.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (_, n) = self.require_matrix("softmax_rows")?;
        let mut out = self.data.clone();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        Tensor::from_shape(self.shape, out)
    }

    /// Layer normalization of a single vector.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = self.numel();
        if self.shape.rank() != 1 {
            return Err(Error::RankMismatch {
                op: "layer_norm",
                expected: 1,
                found: self.shape,
            });
        }
        let col = self.reshape(&[d, 1])?;
        col.layer_norm_cols(gain, bias, eps)?.reshape(&[d])
    }

    /// Layer normalization of every column of a `d×N` matrix (one token per column).
    pub fn layer_norm_cols(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (d, n) = self.require_matrix("layer_norm")?;
        for p in [gain, bias] {
            if p.dims() != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    left: self.shape,
                    right: p.shape,
                });
            }
        }
        let stats = column_stats(&self.data, d, n, eps);
        let mut out = vec![0.0; d * n];
        for i in 0..d {
            for j in 0..n {
                let (mean, inv_std) = stats[j];
                let xhat = (self.data[i * n + j] - mean) * inv_std;
                out[i * n + j] = gain.data[i] * xhat + bias.data[i];
            }
        }
        Tensor::new(&[d, n], out)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::InvalidShape("nothing to concatenate"))?;
        let (_, n) = first.require_matrix("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = p.require_matrix("concat_rows")?;
            if c != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape,
                    right: p.shape,
                });
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&[rows, n], data)
    }

    /// Unfolds a `channels×T` signal into `(channels·kernel)×(T−kernel+1)` sliding windows.
    pub fn im2col(&self, kernel: usize) -> Result<Tensor> {
        let (c, t) = self.require_matrix("im2col")?;
        if kernel == 0 || kernel > t {
            return Err(Error::InvalidConfig("kernel must be between 1 and the signal length"));
        }
        let len = t - kernel + 1;
        let mut out = vec![0.0; c * kernel * len];
        for ci in 0..c {
            for j in 0..kernel {
                let dst = &mut out[(ci * kernel + j) * len..(ci * kernel + j + 1) * len];
                dst.copy_from_slice(&self.data[ci * t + j..ci * t + j + len]);
            }
        }
        Tensor::new(&[c * kernel, len], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| libm::fabs(a - b))
                .fold(0.0, f64::max)
        })
    }
}

/// Below this width a product is rearranged so the innermost loop runs over a
/// long contiguous axis instead of a short one.
const NARROW: usize = 16;

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn transposed(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut dst = vec![0.0; src.len()];
    transpose_into(src, &mut dst, rows, cols);
    dst
}

/// `out += a·b` with `a: p×q`, `b: q×r`, row-major.
fn axpy_rows(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            let b_row = &b[k * r..(k + 1) * r];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += a·btᵀ` with `a: p×q`, `bt: r×q`.
fn dot_rows(a: &[f64], bt: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        for j in 0..r {
            out[i * r + j] += dot(a_row, &bt[j * q..(j + 1) * q]);
        }
    }
}

/// `out += a·b` with `a: p×q`, `b: q×r`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    if r < NARROW && q >= NARROW {
        dot_rows(a, &transposed(b, q, r), out, p, q, r);
    } else {
        axpy_rows(a, b, out, p, q, r);
    }
}

/// `out += a·bᵀ` with `a: p×q`, `b: r×q`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    if q < NARROW && r >= NARROW {
        axpy_rows(a, &transposed(b, r, q), out, p, q, r);
    } else {
        dot_rows(a, b, out, p, q, r);
    }
}

/// `out += aᵀ·b` with `a: q×p`, `b: q×r`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    if r < NARROW && q >= NARROW {
        dot_rows(&transposed(a, q, p), &transposed(b, q, r), out, p, q, r);
        return;
    }
    for k in 0..q {
        let b_row = &b[k * r..(k + 1) * r];
        for i in 0..p {
            let aki = a[k * p + i];
            let out_row = &mut out[i * r..(i + 1) * r];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
}

pub(crate) fn transpose_into(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Per-column `(mean, 1/sqrt(var + eps))` using the population variance.
pub(crate) fn column_stats(data: &[f64], d: usize, n: usize, eps: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|j| {
            let mean = (0..d).map(|i| data[i * n + j]).sum::<f64>() / d as f64;
            let var = (0..d)
                .map(|i| {
                    let c = data[i * n + j] - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            (mean, 1.0 / libm::sqrt(var + eps))
        })
        .collect()
}
