//! Compressed sparse matrices and a factorization handle.
//!
//! Assembly goes through [`TripletBuilder`]; duplicate entries are summed.
//! Factorizations are delegated to `faer`'s sparse LU (partial pivoting), which
//! copes with the symmetric indefinite saddle-point systems used throughout.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

static SEQUENTIAL_FAER: Once = Once::new();

/// Pins faer to sequential kernels so that results are bitwise reproducible;
/// parallelism is applied over independent right-hand sides instead.
fn init_faer() {
    SEQUENTIAL_FAER.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, val));
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Compressed sparse column matrix with sorted, unique row indices per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::with_capacity(n, n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
    }

    /// Iterates `(row, col, value)` in column-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        match self.row_idx[range.clone()].binary_search(&row) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.ncols);
        let mut out = DVector::zeros(self.nrows);
        for c in 0..self.ncols {
            let vc = v[c];
            if vc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                out[self.row_idx[k]] += self.values[k] * vc;
            }
        }
        out
    }

    /// `selfᵀ · v`
    pub fn tr_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.nrows);
        DVector::from_iterator(
            self.ncols,
            (0..self.ncols).map(|c| {
                (self.col_ptr[c]..self.col_ptr[c + 1])
                    .map(|k| self.values[k] * v[self.row_idx[k]])
                    .sum::<f64>()
            }),
        )
    }

    /// `selfᵀ · M` for a dense `M`.
    pub fn tr_mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.nrows);
        let mut out = DMatrix::zeros(self.ncols, m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j);
            for c in 0..self.ncols {
                let mut acc = 0.0;
                for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                    acc += self.values[k] * col[self.row_idx[k]];
                }
                out[(c, j)] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (r, c, v) in self.iter() {
            b.push(c, r, v);
        }
        b.build()
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut b = TripletBuilder::new(self.nrows, other.ncols);
        let mut acc = vec![0.0; self.nrows];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; self.nrows];
        for j in 0..other.ncols {
            for k in other.col_ptr[j]..other.col_ptr[j + 1] {
                let (mid, w) = (other.row_idx[k], other.values[k]);
                for kk in self.col_ptr[mid]..self.col_ptr[mid + 1] {
                    let r = self.row_idx[kk];
                    if !mark[r] {
                        mark[r] = true;
                        touched.push(r);
                    }
                    acc[r] += self.values[kk] * w;
                }
            }
            touched.sort_unstable();
            for &r in &touched {
                b.push(r, j, acc[r]);
                acc[r] = 0.0;
                mark[r] = false;
            }
            touched.clear();
        }
        b.build()
    }

    pub fn scaled(&self, factor: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            d[(r, c)] += v;
        }
        d
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest singular value estimate via power iteration on `AᵀA`.
    pub fn spectral_norm_estimate(&self, iterations: usize) -> f64 {
        let n = self.ncols;
        if n == 0 {
            return 0.0;
        }
        // deterministic, non-degenerate start vector
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin());
        v /= v.norm();
        let mut sigma = 0.0;
        for _ in 0..iterations {
            let w = self.tr_mul_vec(&self.mul_vec(&v));
            let nw = w.norm();
            if nw == 0.0 {
                return 0.0;
            }
            sigma = nw.sqrt();
            v = w / nw;
        }
        sigma
    }

    /// Maximum asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            self.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::Factorization(format!("sparse assembly: {e:?}")))
    }
}

/// LU factorization of a square sparse matrix, reusable for many solves.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

const SOLVE_CHUNK: usize = 8;

impl SparseLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        init_faer();
        if a.nrows != a.ncols {
            return Err(Error::Factorization(format!(
                "matrix is {}x{}, not square",
                a.nrows, a.ncols
            )));
        }
        let lu = a
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::Factorization(format!("sparse LU: {e:?}")))?;
        Ok(Self { n: a.nrows, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n);
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(rhs.as_mut());
        DVector::from_fn(self.n, |i, _| rhs[(i, 0)])
    }

    /// Solves for every column of `b`; columns are distributed over threads
    /// and each is solved independently, so the result does not depend on
    /// the thread count.
    pub fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n);
        let k = b.ncols();
        let chunks: Vec<(usize, Mat<f64>)> = (0..k)
            .step_by(SOLVE_CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let width = SOLVE_CHUNK.min(k - start);
                let mut rhs = Mat::<f64>::from_fn(self.n, width, |i, j| b[(i, start + j)]);
                self.lu.solve_in_place(rhs.as_mut());
                (start, rhs)
            })
            .collect();
        let mut out = DMatrix::zeros(self.n, k);
        for (start, m) in chunks {
            for j in 0..m.ncols() {
                for i in 0..self.n {
                    out[(i, start + j)] = m[(i, j)];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseMatrix {
        let mut b = TripletBuilder::new(3, 3);
        b.push(0, 0, 4.0);
        b.push(0, 1, 1.0);
        b.push(1, 0, 1.0);
        b.push(1, 1, 3.0);
        b.push(2, 2, 2.0);
        b.push(2, 2, 0.5);
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let a = small();
        assert_eq!(a.get(2, 2), 2.5);
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn products_match_dense() {
        let a = small();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let d = a.to_dense();
        assert!((a.mul_vec(&v) - &d * &v).norm() < 1e-14);
        assert!((a.tr_mul_vec(&v) - d.transpose() * &v).norm() < 1e-14);
        let aa = a.matmul(&a.transpose());
        assert!((aa.to_dense() - &d * d.transpose()).norm() < 1e-12);
    }

    #[test]
    fn lu_solves() {
        let a = small();
        let lu = SparseLu::factor(&a).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = lu.solve(&b);
        assert!((a.mul_vec(&x) - &b).norm() < 1e-12);
        let bm = DMatrix::from_fn(3, 20, |i, j| (i + 2 * j) as f64);
        let xm = lu.solve_many(&bm);
        assert!((a.to_dense() * xm - bm).norm() < 1e-10);
    }
}
