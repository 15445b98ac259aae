//! Compressed sparse row matrices. Used for adjacency structure and for the
//! normalized propagation operator; column indices within each row are kept
//! sorted so equality and symmetry checks are plain slice comparisons.

use crate::dense::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<S> {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Csr<S> {
    /// Build from per-entry triplets. Entries are sorted (row, col); duplicate
    /// coordinates are rejected by the callers that care, not here.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, S)>,
    ) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut row = 0;
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet out of bounds");
            while row < r {
                row_offsets.push(col_indices.len());
                row += 1;
            }
            col_indices.push(c);
            values.push(v);
        }
        while row < n_rows {
            row_offsets.push(col_indices.len());
            row += 1;
        }
        Csr {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<S>,
    ) -> Self {
        assert_eq!(row_offsets.len(), n_rows + 1);
        assert_eq!(col_indices.len(), values.len());
        assert_eq!(*row_offsets.last().unwrap(), col_indices.len());
        Csr {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[S]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Sparse * dense.
    pub fn spmm(&self, x: &Mat<S>) -> Mat<S> {
        assert_eq!(self.n_cols, x.rows(), "spmm inner dimensions");
        let mut out = Mat::zeros(self.n_rows, x.cols());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let orow = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for (o, &xj) in orow.iter_mut().zip(x.row(j)) {
                    *o = *o + v * xj;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Csr<S> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((j, i, v));
            }
        }
        Csr::from_triplets(self.n_cols, self.n_rows, triplets)
    }

    /// True when the sparsity pattern equals its transpose's.
    pub fn pattern_is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let t = self.transpose();
        self.row_offsets == t.row_offsets && self.col_indices == t.col_indices
    }

    pub fn to_dense(&self) -> Mat<S> {
        let mut out = Mat::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }
}
