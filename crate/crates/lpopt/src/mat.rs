//! Dense row-major matrices with the handful of kernels the optimizers need.
//!
//! Everything returns fresh values; matrices are never mutated through a
//! shared handle, which keeps concurrent runs trivially safe. Kernels are
//! plain loops arranged for cache locality (ikj matmul, 4-way unrolled dot).

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn dim_err(op: &'static str, a: &Mat, b: &Mat) -> Error {
    Error::DimMismatch {
        op,
        lhs_rows: a.rows,
        lhs_cols: a.cols,
        rhs_rows: b.rows,
        rhs_cols: b.cols,
    }
}

/// Dot product of two equal-length slices with four accumulators so the loop
/// keeps the FP pipelines busy.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = 4 * i;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3) + tail
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Mat {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// i.i.d. standard-normal entries drawn from `rng` in row-major order.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut crate::RngStream) -> Mat {
        let data = (0..rows * cols).map(|_| rng.next_normal()).collect();
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Mat) -> Result<Mat> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Mat) -> Result<Mat> {
        self.zip_map(other, "add_scaled", |a, b| a + c * b)
    }

    pub fn scale(&self, c: f64) -> Mat {
        self.map(|x| c * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Mat, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if !self.same_shape(other) {
            return Err(dim_err(op, self, other));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(dim_err("matmul", self, other));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Mat {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn frob_norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    /// Frobenius norm: sqrt of the sum of squared entries.
    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    /// Frobenius inner product.
    pub fn frob_dot(&self, other: &Mat) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(dim_err("frob_dot", self, other));
        }
        Ok(dot(&self.data, &other.data))
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Order- and bit-sensitive checksum of shape plus entries.
    pub fn bits_checksum(&self) -> u64 {
        let mut acc = crate::rng::derive_stream(self.rows as u64, self.cols as u64, 0x6d61_7472);
        for &x in &self.data {
            acc = crate::rng::derive_stream(acc, x.to_bits(), 1);
        }
        acc
    }
}

/// Frobenius norm over a list of parameter blocks.
pub fn blocks_frob_norm(blocks: &[Mat]) -> f64 {
    blocks
        .iter()
        .map(Mat::frob_norm_sq)
        .sum::<f64>()
        .sqrt()
}

/// Checksum over a list of parameter blocks.
pub fn blocks_checksum(blocks: &[Mat]) -> u64 {
    let mut acc = 0x626c_6f63_6b73_u64;
    for b in blocks {
        acc = crate::rng::derive_stream(acc, b.bits_checksum(), 2);
    }
    acc
}
