//! Thin helpers over `faer` used by the estimator and the recursions.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{Llt, Solve};
use faer::{Accum, Col, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite matrix `M + jitter I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    llt: Llt<f64>,
    jitter: f64,
    min_pivot: f64,
}

impl SpdFactor {
    /// Factorizes `m + jitter * I`.
    ///
    /// Pivots below `n * eps * max(diag)` are rejected even when the
    /// floating-point factorization happens to succeed, so exactly singular
    /// Gram matrices (duplicated samples with no jitter) are reported.
    pub fn new(m: MatRef<'_, f64>, jitter: f64) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::Input(format!(
                "cannot factor a {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut shifted = m.to_owned();
        let mut max_diag = 0.0_f64;
        for i in 0..n {
            shifted[(i, i)] += jitter;
            max_diag = max_diag.max(shifted[(i, i)].abs());
        }
        let threshold = n as f64 * f64::EPSILON * max_diag.max(f64::MIN_POSITIVE);
        let llt = match shifted.llt(Side::Lower) {
            Ok(llt) => llt,
            Err(err) => {
                let index = match err {
                    faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
                        index
                    }
                };
                return Err(Error::NotPositiveDefinite {
                    gamma: jitter,
                    index,
                    min_pivot: smallest_pivot(shifted.as_ref()),
                });
            }
        };
        let l = llt.L();
        let (mut index, mut min_pivot) = (0, f64::INFINITY);
        for i in 0..n {
            let p = l[(i, i)] * l[(i, i)];
            if p < min_pivot {
                min_pivot = p;
                index = i;
            }
        }
        if min_pivot <= threshold {
            return Err(Error::NotPositiveDefinite {
                gamma: jitter,
                index,
                min_pivot,
            });
        }
        Ok(Self {
            llt,
            jitter,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let mut col = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.llt.solve_in_place(col.as_mut());
        col.col_as_slice(0).to_vec()
    }

    /// Applies the factored matrix `L Lᵀ` to `v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        let x = col_from(v);
        let lt_x = l.transpose() * &x;
        let out = l * &lt_x;
        out.iter().copied().collect()
    }
}

fn smallest_pivot(m: MatRef<'_, f64>) -> f64 {
    match m.ldlt(Side::Lower) {
        Ok(ldlt) => {
            let d = ldlt.D();
            (0..d.dim())
                .map(|i| d[i])
                .fold(f64::INFINITY, f64::min)
        }
        Err(_) => f64::NAN,
    }
}

pub fn col_from(v: &[f64]) -> Col<f64> {
    Col::from_fn(v.len(), |i| v[i])
}

/// `out = mᵀ v`.
pub fn matvec_t(m: MatRef<'_, f64>, v: &[f64], out: &mut [f64]) {
    let rhs = MatRef::from_column_major_slice(v, v.len(), 1);
    let dst = faer::MatMut::from_column_major_slice_mut(out, m.ncols(), 1);
    matmul(dst, Accum::Replace, m.transpose(), rhs, 1.0, Par::Seq);
}

/// `out = m v`.
pub fn matvec(m: MatRef<'_, f64>, v: &[f64], out: &mut [f64]) {
    let rhs = MatRef::from_column_major_slice(v, v.len(), 1);
    let dst = faer::MatMut::from_column_major_slice_mut(out, m.nrows(), 1);
    matmul(dst, Accum::Replace, m, rhs, 1.0, Par::Seq);
}

pub fn frobenius_sq(m: MatRef<'_, f64>) -> f64 {
    m.squared_norm_l2()
}

pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}

/// Row-major copy of a matrix (the on-disk layout).
pub fn to_row_major(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Mat<f64> {
    assert_eq!(data.len(), rows * cols);
    Mat::from_fn(rows, cols, |i, j| data[i * cols + j])
}

pub fn column(m: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}
