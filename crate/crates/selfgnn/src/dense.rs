//! Dense row-major matrices and the small direct linear algebra kernels the
//! crate needs (matmul variants, LU solve, symmetric Jacobi eigenvalues).
//!
//! Kernels keep a fixed per-row summation order: parallelism, when enabled,
//! is only ever over disjoint output rows, so results are bitwise identical
//! to the sequential loop for any thread count.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rayon::prelude::*;

/// Below this many multiply-adds a matmul stays sequential; the rayon
/// dispatch overhead dominates otherwise.
const PAR_THRESHOLD: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match dims");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F + Sync) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, c: F) {
        for v in &mut self.data {
            *v = *v * c;
        }
    }

    /// self += c * other
    pub fn axpy(&mut self, c: F, other: &Matrix<F>) {
        assert_eq!(self.shape(), other.shape());
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s = *s + c * *o;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<F>) {
        self.axpy(F::one(), other);
    }

    pub fn frobenius_dot(&self, other: &Matrix<F>) -> F {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn frobenius_norm(&self) -> F {
        self.frobenius_dot(self).sqrt()
    }

    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn transpose(&self) -> Matrix<F> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// New matrix whose row r is `self.row(indices[r])`.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix<F> {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (r, &src) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(src));
        }
        out
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn hcat(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
        assert_eq!(a.rows, b.rows, "hcat requires equal row counts");
        let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
        for i in 0..a.rows {
            out.row_mut(i)[..a.cols].copy_from_slice(a.row(i));
            out.row_mut(i)[a.cols..].copy_from_slice(b.row(i));
        }
        out
    }

    pub fn col_sums(&self) -> Vec<F> {
        let mut sums = vec![F::zero(); self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s = *s + *v;
            }
        }
        sums
    }

    /// C = A · B
    pub fn matmul(&self, b: &Matrix<F>) -> Result<Matrix<F>> {
        if self.cols != b.rows {
            return Err(Error::Shape(format!(
                "matmul: ({}x{}) x ({}x{})",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, b.cols);
        let mut out = Matrix::zeros(m, n);
        let body = |i: usize, out_row: &mut [F]| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (aik, b_row) in a_row.iter().zip(b.data.chunks_exact(n)) {
                let aik = *aik;
                for (o, bv) in out_row.iter_mut().zip(b_row) {
                    *o = *o + aik * *bv;
                }
            }
        };
        if m * k * n >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.data.chunks_exact_mut(n).enumerate() {
                body(i, row);
            }
        }
        Ok(out)
    }

    /// C = Aᵀ · B where A is self (m×k), B is m×n, C is k×n.
    pub fn matmul_at_b(&self, b: &Matrix<F>) -> Result<Matrix<F>> {
        if self.rows != b.rows {
            return Err(Error::Shape(format!(
                "matmul_at_b: ({}x{})ᵀ x ({}x{})",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let (k, n) = (self.cols, b.cols);
        let mut out = Matrix::zeros(k, n);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = &b.data[i * n..(i + 1) * n];
            for (aik, out_row) in a_row.iter().zip(out.data.chunks_exact_mut(n)) {
                let aik = *aik;
                if aik != F::zero() {
                    for (o, bv) in out_row.iter_mut().zip(b_row) {
                        *o = *o + aik * *bv;
                    }
                }
            }
        }
        Ok(out)
    }

    /// C = A · Bᵀ where A is self (m×k), B is n×k, C is m×n.
    pub fn matmul_a_bt(&self, b: &Matrix<F>) -> Result<Matrix<F>> {
        if self.cols != b.cols {
            return Err(Error::Shape(format!(
                "matmul_a_bt: ({}x{}) x ({}x{})ᵀ",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, b.rows);
        let mut out = Matrix::zeros(m, n);
        let body = |i: usize, out_row: &mut [F]| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for (av, bv) in a_row.iter().zip(b_row) {
                    acc = acc + *av * *bv;
                }
                *o = acc;
            }
        };
        if m * k * n >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.data.chunks_exact_mut(n).enumerate() {
                body(i, row);
            }
        }
        Ok(out)
    }
}

impl<F: Scalar> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F: Scalar> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// Solve A·X = B by LU with partial pivoting. Consumes both operands;
/// returns X with B's shape. A must be square and nonsingular.
pub fn lu_solve(mut a: Matrix<f64>, mut b: Matrix<f64>) -> Result<Matrix<f64>> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Shape("lu_solve: matrix not square".into()));
    }
    if b.rows != n {
        return Err(Error::Shape("lu_solve: rhs row count mismatch".into()));
    }
    let m = b.cols;
    for col in 0..n {
        let mut piv = col;
        let mut best = a[(col, col)].abs();
        for r in col + 1..n {
            let v = a[(r, col)].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return Err(Error::Numeric("lu_solve: singular matrix".into()));
        }
        if piv != col {
            for c in 0..n {
                let t = a[(col, c)];
                a[(col, c)] = a[(piv, c)];
                a[(piv, c)] = t;
            }
            for c in 0..m {
                let t = b[(col, c)];
                b[(col, c)] = b[(piv, c)];
                b[(piv, c)] = t;
            }
        }
        let inv = 1.0 / a[(col, col)];
        // Split so the pivot row can be read while trailing rows are updated.
        let (a_head, a_tail) = a.data.split_at_mut((col + 1) * n);
        let a_pivot = &a_head[col * n..];
        let (b_head, b_tail) = b.data.split_at_mut((col + 1) * m);
        let b_pivot = &b_head[col * m..];
        let update = |(a_row, b_row): (&mut [f64], &mut [f64])| {
            let f = a_row[col] * inv;
            if f != 0.0 {
                a_row[col] = f;
                for (v, p) in a_row[col + 1..].iter_mut().zip(&a_pivot[col + 1..n]) {
                    *v -= f * *p;
                }
                for (v, p) in b_row.iter_mut().zip(b_pivot) {
                    *v -= f * *p;
                }
            }
        };
        let pairs = a_tail.chunks_exact_mut(n).zip(b_tail.chunks_exact_mut(m));
        if n * m >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
            let mut rows: Vec<_> = pairs.collect();
            rows.par_iter_mut().for_each(|(ar, br)| {
                update((&mut ar[..], &mut br[..]));
            });
        } else {
            for (ar, br) in pairs {
                update((ar, br));
            }
        }
    }
    // Back substitution, row-wise over all right-hand sides at once.
    for i in (0..n).rev() {
        for j in i + 1..n {
            let f = a[(i, j)];
            if f != 0.0 {
                let (bi, bj) = {
                    let (head, tail) = b.data.split_at_mut((i + 1) * m);
                    (&mut head[i * m..], &tail[(j - i - 1) * m..(j - i) * m])
                };
                for (v, x) in bi.iter_mut().zip(bj) {
                    *v -= f * *x;
                }
            }
        }
        let inv = 1.0 / a[(i, i)];
        for v in b.row_mut(i) {
            *v *= inv;
        }
    }
    Ok(b)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// returned in descending order.
pub fn sym_eigenvalues(mat: &Matrix<f64>) -> Result<Vec<f64>> {
    let n = mat.rows;
    if mat.cols != n {
        return Err(Error::Shape("sym_eigenvalues: matrix not square".into()));
    }
    let mut a = mat.clone();
    let tol = 1e-14 * a.max_abs().max(1.0);
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[(p, q)].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let id = Matrix::<f64>::identity(2);
        assert_eq!(id.matmul(&x).unwrap(), x);
    }

    #[test]
    fn matmul_shapes_checked() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
        assert!(a.matmul_at_b(&b).is_ok());
        assert!(a.matmul_a_bt(&b).is_ok());
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.7 - 1.0);
        let b = Matrix::from_fn(4, 5, |i, j| (i as f64 - j as f64) * 0.3);
        let want = a.transpose().matmul(&b).unwrap();
        let got = a.matmul_at_b(&b).unwrap();
        for (x, y) in want.data().iter().zip(got.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = Matrix::from_fn(5, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        let want = a.matmul(&c.transpose()).unwrap();
        let got = a.matmul_a_bt(&c).unwrap();
        for (x, y) in want.data().iter().zip(got.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_solves_small_system() {
        let a = Matrix::from_vec(2, 2, vec![4.0, 1.0, 1.0, 3.0]);
        let b = Matrix::from_vec(2, 1, vec![1.0, 2.0]);
        let x = lu_solve(a.clone(), b.clone()).unwrap();
        let back = a.matmul(&x).unwrap();
        for (u, v) in back.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        let b = Matrix::<f64>::identity(2);
        assert!(lu_solve(a, b).is_err());
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // diag(5, 2, -1) conjugated by a rotation in the (0,1) plane
        let (c, s) = (0.8f64, 0.6f64);
        let d = [5.0, 2.0, -1.0];
        let mut m = Matrix::<f64>::zeros(3, 3);
        m[(0, 0)] = c * c * d[0] + s * s * d[1];
        m[(0, 1)] = c * s * (d[0] - d[1]);
        m[(1, 0)] = m[(0, 1)];
        m[(1, 1)] = s * s * d[0] + c * c * d[1];
        m[(2, 2)] = d[2];
        let eig = sym_eigenvalues(&m).unwrap();
        assert!((eig[0] - 5.0).abs() < 1e-10);
        assert!((eig[1] - 2.0).abs() < 1e-10);
        assert!((eig[2] + 1.0).abs() < 1e-10);
    }
}
