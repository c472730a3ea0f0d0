//! Dense linear-algebra primitives shared by the solvers.
//!
//! Matrices are stored row-major in an [`ndarray::Array2`]. The heavy kernels
//! (SVD, matrix products) run through `faer` on zero-copy views of that
//! storage.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, invalid_input, Error, Result};

/// Relative cutoff below which singular values are treated as zero by
/// [`least_squares`].
pub const PINV_RCOND: f64 = 1e-10;

/// A finite, non-empty, row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    data: Array2<f64>,
}

impl DenseMatrix {
    /// Wraps an array after checking that it is non-empty and finite.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows == 0 || cols == 0 {
            return Err(invalid_input(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self::from_array_unchecked(data))
    }

    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(invalid_input(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        let data = Array2::from_shape_vec((rows, cols), entries)
            .map_err(|e| invalid_input(e.to_string()))?;
        Self::new(data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        Self { data: Array2::zeros((rows, cols)) }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix must be non-empty");
        Self { data: Array2::eye(n) }
    }

    /// `rows x cols` matrix with `diag` on the leading diagonal.
    pub fn from_diagonal(rows: usize, cols: usize, diag: &[f64]) -> Result<Self> {
        if diag.len() > rows.min(cols) {
            return Err(invalid_input("diagonal longer than the matrix allows"));
        }
        let mut data = Array2::zeros((rows.max(1), cols.max(1)));
        for (i, &d) in diag.iter().enumerate() {
            data[[i, i]] = d;
        }
        Self::new(data)
    }

    /// Skips the finiteness scan. The array is copied into standard layout if needed.
    pub(crate) fn from_array_unchecked(data: Array2<f64>) -> Self {
        debug_assert!(data.nrows() > 0 && data.ncols() > 0);
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Self { data }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[[row, col]]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn transpose(&self) -> DenseMatrix {
        Self::from_array_unchecked(self.data.t().as_standard_layout().into_owned())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).to_vec()
    }

    pub fn select_columns(&self, cols: &[usize]) -> DenseMatrix {
        Self::from_array_unchecked(self.data.select(Axis(1), cols))
    }

    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        Self::from_array_unchecked(self.data.select(Axis(0), rows))
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(other)?;
        Ok(Self::from_array_unchecked(&self.data - &other.data))
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(other)?;
        Ok(Self::from_array_unchecked(&self.data + &other.data))
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        Self::from_array_unchecked(&self.data * factor)
    }

    pub(crate) fn check_same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(invalid_input(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols() != other.rows() {
            return Err(invalid_input(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, n) = (self.rows(), other.cols());
        let mut out = vec![0.0; m * n];
        // (A B)^T = B^T A^T, and a row-major buffer is the column-major transpose.
        matmul(
            MatMut::from_column_major_slice_mut(&mut out, n, m),
            Accum::Replace,
            other.faer_t(),
            self.faer_t(),
            1.0,
            Par::Seq,
        );
        Ok(Self::from_array_unchecked(
            Array2::from_shape_vec((m, n), out).expect("sized buffer"),
        ))
    }

    /// `self^T * self`.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.cols();
        let mut out = vec![0.0; n * n];
        let at = self.faer_t();
        matmul(
            MatMut::from_column_major_slice_mut(&mut out, n, n),
            Accum::Replace,
            at,
            at.transpose(),
            1.0,
            Par::Seq,
        );
        Self::from_array_unchecked(Array2::from_shape_vec((n, n), out).expect("sized buffer"))
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(invalid_input(format!(
                "vector of length {} does not match {} columns",
                x.len(),
                self.cols()
            )));
        }
        Ok(self
            .data
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `self^T * y`.
    pub fn t_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows() {
            return Err(invalid_input(format!(
                "vector of length {} does not match {} rows",
                y.len(),
                self.rows()
            )));
        }
        let mut out = vec![0.0; self.cols()];
        for (row, &yi) in self.data.rows().into_iter().zip(y) {
            if yi != 0.0 {
                for (o, a) in out.iter_mut().zip(row.iter()) {
                    *o += a * yi;
                }
            }
        }
        Ok(out)
    }

    /// Column-major view of the transpose (zero-copy).
    fn faer_t(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(self.as_slice(), self.cols(), self.rows())
    }

    fn faer(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(self.as_slice(), self.rows(), self.cols())
    }
}

/// Thin singular value decomposition `M = U diag(s) V^T`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `m x k` with orthonormal columns.
    pub left_vectors: Array2<f64>,
    /// Non-negative and non-increasing, length `k = min(m, n)`.
    pub singular_values: Vec<f64>,
    /// `n x k` with orthonormal columns.
    pub right_vectors: Array2<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> DenseMatrix {
        let scaled = &self.left_vectors * &ndarray::Array1::from(self.singular_values.clone());
        DenseMatrix::from_array_unchecked(scaled.dot(&self.right_vectors.t()))
    }

    /// Number of singular values above `rel_tol * sigma_1`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel_tol * top).count()
    }
}

fn faer_to_array(mat: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((mat.nrows(), mat.ncols()), |(i, j)| mat[(i, j)])
}

fn svd_error(e: impl std::fmt::Debug) -> Error {
    Error::Factorization(format!("svd did not converge: {e:?}"))
}

pub fn svd(m: &DenseMatrix) -> Result<SvdFactors> {
    let decomposition = m.faer().thin_svd().map_err(svd_error)?;
    let singular_values = decomposition
        .S()
        .column_vector()
        .iter()
        .map(|s| s.max(0.0))
        .collect();
    Ok(SvdFactors {
        left_vectors: faer_to_array(decomposition.U()),
        singular_values,
        right_vectors: faer_to_array(decomposition.V()),
    })
}

pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    m.faer().singular_values().map_err(svd_error)
}

/// Largest singular value.
pub fn operator_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0).max(0.0))
}

/// Sum of singular values (trace norm).
pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Output of the singular-value shrinkage step, with the by-products the
/// completion solver needs.
#[derive(Debug, Clone)]
pub(crate) struct Shrunk {
    pub matrix: DenseMatrix,
    /// Nuclear norm of `matrix`, i.e. the sum of the shrunk singular values.
    pub nuclear_norm: f64,
    pub rank: usize,
}

pub(crate) fn shrink(m: &DenseMatrix, tau: f64) -> Result<Shrunk> {
    if tau == 0.0 {
        return Ok(Shrunk {
            nuclear_norm: nuclear_norm(m)?,
            rank: m.rows().min(m.cols()),
            matrix: m.clone(),
        });
    }
    let (rows, cols) = m.shape();
    let decomposition = m.faer().thin_svd().map_err(svd_error)?;
    let sv = decomposition.S().column_vector();
    let kept: Vec<f64> = sv.iter().map(|s| s - tau).take_while(|s| *s > 0.0).collect();
    let rank = kept.len();
    let mut out = vec![0.0; rows * cols];
    if rank > 0 {
        let u = decomposition.U();
        let scaled_u = faer::Mat::from_fn(rows, rank, |i, j| u[(i, j)] * kept[j]);
        let v = decomposition.V().subcols(0, rank);
        // Row-major (U S V^T) is column-major (V S U^T).
        matmul(
            MatMut::from_column_major_slice_mut(&mut out, cols, rows),
            Accum::Replace,
            v,
            scaled_u.transpose(),
            1.0,
            Par::Seq,
        );
    }
    Ok(Shrunk {
        matrix: DenseMatrix::from_array_unchecked(
            Array2::from_shape_vec((rows, cols), out).expect("sized buffer"),
        ),
        nuclear_norm: kept.iter().sum(),
        rank,
    })
}

/// Singular value soft-thresholding: `U diag(max(s - tau, 0)) V^T`.
pub fn svt(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(invalid_argument(format!("threshold must be finite and >= 0, got {tau}")));
    }
    Ok(shrink(m, tau)?.matrix)
}

/// Orthonormal basis of the column space of a full-column-rank matrix (thin Q
/// of a QR factorization).
pub fn orthonormal_columns(a: &DenseMatrix) -> DenseMatrix {
    let q = a.faer().qr().compute_thin_Q();
    DenseMatrix::from_array_unchecked(faer_to_array(q.as_ref()))
}

/// Minimum-norm least-squares solution `X^+ y`, with singular values below
/// `PINV_RCOND * sigma_1` treated as zero.
pub fn least_squares(x: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != x.rows() {
        return Err(invalid_input(format!(
            "design has {} rows but y has length {}",
            x.rows(),
            y.len()
        )));
    }
    let factors = svd(x)?;
    let top = factors.singular_values.first().copied().unwrap_or(0.0);
    let mut beta = vec![0.0; x.cols()];
    if top == 0.0 {
        return Ok(beta);
    }
    for (k, &s) in factors.singular_values.iter().enumerate() {
        if s <= PINV_RCOND * top {
            break;
        }
        let u = factors.left_vectors.column(k);
        let coef = u.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / s;
        for (b, v) in beta.iter_mut().zip(factors.right_vectors.column(k).iter()) {
            *b += coef * v;
        }
    }
    Ok(beta)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
