//! Compressed sparse row adjacency and the propagation kernels built on it.

use ndarray::{Array2, ArrayView2, Axis};

/// Symmetric sparse matrix in CSR form. Rows are sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds a binary adjacency from undirected edges. Self loops and
    /// duplicates are dropped; every edge is stored in both directions.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u == v {
                continue;
            }
            rows[u].push(v);
            rows[v].push(u);
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            indptr.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        Csr { n, indptr, indices, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries, counting both directions of each edge.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    /// Undirected edge list with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n).flat_map(|u| self.row(u).filter(move |&(v, _)| u < v).map(move |(v, _)| (u, v))).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// GCN propagation matrix `D^-1/2 (A + I) D^-1/2` with degrees taken on `A + I`.
    pub fn gcn_normalized(&self) -> Csr {
        let inv_sqrt: Vec<f64> = (0..self.n).map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt()).collect();
        let mut indptr = Vec::with_capacity(self.n + 1);
        let mut indices = Vec::with_capacity(self.nnz() + self.n);
        let mut values = Vec::with_capacity(self.nnz() + self.n);
        indptr.push(0);
        for i in 0..self.n {
            let mut placed_diag = false;
            for (j, v) in self.row(i) {
                if !placed_diag && j > i {
                    indices.push(i);
                    values.push(inv_sqrt[i] * inv_sqrt[i]);
                    placed_diag = true;
                }
                indices.push(j);
                values.push(v * inv_sqrt[i] * inv_sqrt[j]);
            }
            if !placed_diag {
                indices.push(i);
                values.push(inv_sqrt[i] * inv_sqrt[i]);
            }
            indptr.push(indices.len());
        }
        Csr { n: self.n, indptr, indices, values }
    }

    /// `self · dense`, splitting rows across threads when the `parallel`
    /// feature is on. Each output row is summed in the same order either way,
    /// so both paths return identical bits.
    pub fn matmul(&self, dense: ArrayView2<'_, f64>) -> Array2<f64> {
        #[cfg(feature = "parallel")]
        {
            if self.nnz() * dense.ncols() >= PARALLEL_WORK_THRESHOLD {
                return self.matmul_parallel(dense);
            }
        }
        self.matmul_sequential(dense)
    }

    pub fn matmul_sequential(&self, dense: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(dense.nrows(), self.n, "sparse matmul shape mismatch");
        let mut out = Array2::zeros((self.n, dense.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            self.accumulate_row(i, dense, out_row.as_slice_mut().expect("row-major"));
        }
        out
    }

    #[cfg(feature = "parallel")]
    pub fn matmul_parallel(&self, dense: ArrayView2<'_, f64>) -> Array2<f64> {
        use rayon::prelude::*;
        assert_eq!(dense.nrows(), self.n, "sparse matmul shape mismatch");
        let cols = dense.ncols();
        let mut out = Array2::zeros((self.n, cols));
        if cols == 0 {
            return out;
        }
        out.as_slice_mut()
            .expect("fresh array is contiguous")
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, out_row)| self.accumulate_row(i, dense, out_row));
        out
    }

    fn accumulate_row(&self, i: usize, dense: ArrayView2<'_, f64>, out_row: &mut [f64]) {
        for (j, v) in self.row(i) {
            for (o, x) in out_row.iter_mut().zip(dense.row(j).iter()) {
                *o += v * x;
            }
        }
    }
}

#[cfg(feature = "parallel")]
const PARALLEL_WORK_THRESHOLD: usize = 1 << 16;
