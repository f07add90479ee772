use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        DenseMat {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(DenseMat { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Glorot/Xavier uniform initialization in `[-b, b]`, `b = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        DenseMat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMat {
        DenseMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &DenseMat, f: impl Fn(f64, f64) -> f64) -> DenseMat {
        debug_assert_eq!(self.shape(), other.shape());
        DenseMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> DenseMat {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &DenseMat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> DenseMat {
        let mut out = DenseMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DenseMat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn select_rows(&self, idx: &[usize]) -> DenseMat {
        let mut out = DenseMat::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    fn check_same(&self, other: &DenseMat, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &DenseMat) -> Result<DenseMat> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn checked_sub(&self, other: &DenseMat) -> Result<DenseMat> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &DenseMat) -> Result<DenseMat> {
        self.check_same(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMat) -> Result<DenseMat> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let a = Strided::row_major(self);
        let b = Strided::row_major(other);
        Ok(gemm(self.rows, self.cols, other.cols, a, b))
    }

    /// `self * other^T`.
    pub fn matmul_transb(&self, other: &DenseMat) -> Result<DenseMat> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_transb",
                format!("{:?} x {:?}^T", self.shape(), other.shape()),
            ));
        }
        let a = Strided::row_major(self);
        let b = Strided::transposed(other);
        Ok(gemm(self.rows, self.cols, other.rows, a, b))
    }

    /// `self^T * other`.
    pub fn matmul_transa(&self, other: &DenseMat) -> Result<DenseMat> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "matmul_transa",
                format!("{:?}^T x {:?}", self.shape(), other.shape()),
            ));
        }
        let a = Strided::transposed(self);
        let b = Strided::row_major(other);
        Ok(gemm(self.cols, self.rows, other.cols, a, b))
    }
}

/// A matrix operand as data plus row and column strides.
struct Strided<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> Strided<'a> {
    fn row_major(m: &'a DenseMat) -> Self {
        Strided {
            data: &m.data,
            rs: m.cols as isize,
            cs: 1,
        }
    }

    fn transposed(m: &'a DenseMat) -> Self {
        Strided {
            data: &m.data,
            rs: 1,
            cs: m.cols as isize,
        }
    }
}

/// `(m x k) * (k x n)` into a fresh row-major matrix.
fn gemm(m: usize, k: usize, n: usize, a: Strided<'_>, b: Strided<'_>) -> DenseMat {
    let mut out = DenseMat::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    debug_assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    // SAFETY: both operands hold at least `m*k` and `k*n` elements laid out
    // with the given strides, and `out` is a distinct `m x n` buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
