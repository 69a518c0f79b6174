//! Compressed sparse row matrices. Adjacency and diffusion operators live
//! here; the multiply kernel accumulates in a fixed column-index order so
//! results do not depend on thread count.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<F> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<F>,
}

impl<F: Scalar> CsrMatrix<F> {
    /// Build from (row, col, value) triples. Duplicate coordinates are
    /// summed; explicit zeros are kept (callers prune if they care).
    pub fn from_coo(rows: usize, cols: usize, mut triples: Vec<(usize, usize, F)>) -> Result<Self> {
        for &(r, c, _) in &triples {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!(
                    "entry ({r},{c}) outside {rows}x{cols} matrix"
                )));
            }
        }
        triples.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triples.len());
        let mut values: Vec<F> = Vec::with_capacity(triples.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triples {
            if last == Some((r, c)) {
                let merged = values.last_mut().expect("merge follows a push");
                *merged = *merged + v;
                continue;
            }
            last = Some((r, c));
            // row_ptr[r+1] counts entries in row r until the prefix pass below
            col_idx.push(c as u32);
            values.push(v);
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<F>,
    ) -> Result<Self> {
        let m = CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.row_ptr.len() != self.rows + 1
            || *self.row_ptr.first().unwrap_or(&1) != 0
            || *self.row_ptr.last().unwrap_or(&0) != self.col_idx.len()
            || self.col_idx.len() != self.values.len()
        {
            return Err(Error::Shape("inconsistent csr structure".into()));
        }
        for w in self.row_ptr.windows(2) {
            if w[0] > w[1] {
                return Err(Error::Shape("csr row offsets not monotone".into()));
            }
        }
        for r in 0..self.rows {
            let cols = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Shape(format!("csr row {r} columns not sorted")));
                }
            }
            if let Some(&c) = cols.last() {
                if c as usize >= self.cols {
                    return Err(Error::Shape(format!("csr row {r} column out of range")));
                }
            }
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![F::one(); n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    /// (column, value) pairs of row i, column-sorted.
    pub fn row_iter(&self, i: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.values[span.start + k],
            Err(_) => F::zero(),
        }
    }

    /// Dense product S · D. Row-parallel; per-row accumulation order is the
    /// CSR column order regardless of threads.
    pub fn spmm(&self, dense: &Matrix<F>) -> Result<Matrix<F>> {
        if self.cols != dense.rows() {
            return Err(Error::Shape(format!(
                "spmm: ({}x{}) x ({}x{})",
                self.rows,
                self.cols,
                dense.rows(),
                dense.cols()
            )));
        }
        let n = dense.cols();
        let mut out = Matrix::zeros(self.rows, n);
        let body = |i: usize, out_row: &mut [F]| {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.values[k];
                let d_row = dense.row(self.col_idx[k] as usize);
                for (o, dv) in out_row.iter_mut().zip(d_row) {
                    *o = *o + v * *dv;
                }
            }
        };
        if self.nnz() * n >= 1 << 18 && rayon::current_num_threads() > 1 {
            out.data_mut()
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for i in 0..self.rows {
                body(i, out.row_mut(i));
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> CsrMatrix<F> {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![F::zero(); self.nnz()];
        let mut next = counts.clone();
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                let slot = next[c];
                next[c] += 1;
                col_idx[slot] = r as u32;
                values[slot] = self.values[k];
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    pub fn densify(&self) -> Matrix<F> {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_iter(i) {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn from_dense(dense: &Matrix<F>) -> Self {
        let mut triples = Vec::new();
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != F::zero() {
                    triples.push((i, j, v));
                }
            }
        }
        Self::from_coo(dense.rows(), dense.cols(), triples).expect("dense dims are valid")
    }

    pub fn cast<G: Scalar>(&self) -> CsrMatrix<G> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self
                .values
                .iter()
                .map(|v| G::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for (j, v) in self.row_iter(i) {
                if self.get(j, i) != v {
                    return false;
                }
            }
        }
        true
    }

    /// Drop stored entries with |v| == 0 (after renormalization passes etc.).
    pub fn prune_zeros(&mut self) {
        let mut row_ptr = vec![0usize; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != F::zero() {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> CsrMatrix<f64> {
        // [[0, 2, 0], [1, 0, 3]]
        CsrMatrix::from_coo(2, 3, vec![(0, 1, 2.0), (1, 0, 1.0), (1, 2, 3.0)]).unwrap()
    }

    #[test]
    fn coo_sums_duplicates() {
        let m = CsrMatrix::from_coo(2, 2, vec![(0, 0, 1.0), (0, 0, 2.5), (1, 1, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 3.5);
    }

    #[test]
    fn coo_rejects_out_of_range() {
        assert!(CsrMatrix::from_coo(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn spmm_matches_dense() {
        let s = small();
        let d = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 + 0.5);
        let got = s.spmm(&d).unwrap();
        let want = s.densify().matmul(&d).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn transpose_roundtrip() {
        let s = small();
        let tt = s.transpose().transpose();
        assert_eq!(s, tt);
        assert_eq!(s.transpose().densify(), s.densify().transpose());
    }

    #[test]
    fn get_and_row_iter_agree() {
        let s = small();
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(0, 0), 0.0);
        let row: Vec<_> = s.row_iter(1).collect();
        assert_eq!(row, vec![(0, 1.0), (2, 3.0)]);
    }

    #[test]
    fn prune_drops_explicit_zeros() {
        let mut m =
            CsrMatrix::from_coo(2, 2, vec![(0, 0, 0.0), (0, 1, 2.0), (1, 1, 0.0)]).unwrap();
        assert_eq!(m.nnz(), 3);
        m.prune_zeros();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), 2.0);
    }

    proptest! {
        #[test]
        fn spmm_with_identity_is_densify(
            triples in proptest::collection::vec((0usize..8, 0usize..8, -5.0f64..5.0), 0..40)
        ) {
            let s = CsrMatrix::from_coo(8, 8, triples).unwrap();
            let id = Matrix::<f64>::identity(8);
            prop_assert_eq!(s.spmm(&id).unwrap(), s.densify());
        }

        #[test]
        fn from_dense_roundtrip(
            vals in proptest::collection::vec(-3.0f64..3.0, 12)
        ) {
            let d = Matrix::from_vec(3, 4, vals);
            prop_assert_eq!(CsrMatrix::from_dense(&d).densify(), d);
        }
    }
}
