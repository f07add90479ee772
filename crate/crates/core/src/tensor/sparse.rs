use crate::error::{Error, Result};
use crate::tensor::DenseMat;

/// Compressed-sparse-row matrix. Column indices within a row are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMat {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMat {
    /// Builds a CSR matrix from `(row, col, value)` triplets in any order.
    /// Duplicate coordinates and out-of-range indices are rejected.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(i, j, v) in &triplets {
            if i >= rows || j >= cols {
                return Err(Error::shape(
                    "sparse",
                    format!("entry ({i},{j}) outside {rows}x{cols}"),
                ));
            }
            if prev == Some((i, j)) {
                return Err(Error::Contract(format!("duplicate sparse entry ({i},{j})")));
            }
            if !v.is_finite() {
                return Err(Error::numeric("sparse"));
            }
            prev = Some((i, j));
            indptr[i + 1] += 1;
            indices.push(j);
            values.push(v);
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(SparseMat {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &DenseMat) -> Self {
        let mut indptr = Vec::with_capacity(m.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseMat {
            rows: m.rows(),
            cols: m.cols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMat {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
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
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values stored in row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, vals) = self.row(i);
        idx.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over stored `(row, col, value)` entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (idx, vals) = self.row(i);
            idx.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut out = DenseMat::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            out.set(i, j, v);
        }
        out
    }

    /// Sparse-dense product `self * z`, `O(nnz * z.cols)`.
    pub fn spmm(&self, z: &DenseMat) -> Result<DenseMat> {
        if self.cols != z.rows() {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} sparse x {:?}", self.rows, self.cols, z.shape()),
            ));
        }
        let d = z.cols();
        let mut out = DenseMat::zeros(self.rows, d);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let o = out.row_mut(i);
            for (&j, &v) in idx.iter().zip(vals) {
                for (acc, &x) in o.iter_mut().zip(z.row(j)) {
                    *acc += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * g` without materializing the transpose.
    pub fn spmm_transpose(&self, g: &DenseMat) -> Result<DenseMat> {
        if self.rows != g.rows() {
            return Err(Error::shape(
                "spmm_transpose",
                format!("({}x{})^T x {:?}", self.rows, self.cols, g.shape()),
            ));
        }
        let d = g.cols();
        let mut out = DenseMat::zeros(self.cols, d);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let g_row = g.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                for (acc, &x) in out.row_mut(j).iter_mut().zip(g_row) {
                    *acc += v * x;
                }
            }
        }
        Ok(out)
    }
}
