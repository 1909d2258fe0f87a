//! Dense reference implementations for testing.
//!
//! Everything here materializes the matrices that the rest of the crate
//! deliberately keeps implicit: dense Kronecker expansions, stacked
//! measurement systems, pseudo-inverses, best-linear-unbiased
//! reconstruction, and dense privacy-cost matrices. The module exists so
//! the fast paths can be checked against an independently-built dense
//! route; it is guarded to toy sizes and is not meant for real workloads.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kronop::{Factor, KronOperator};
use crate::schema::{AttrSet, Schema};

/// Hard ceiling on either dimension of a densified operator.
pub const DENSE_SIZE_LIMIT: u128 = 4096;

/// Relative eigenvalue cutoff for pseudo-inverses: eigenvalues below
/// `PINV_CUTOFF · λ_max` are treated as zero. Residual Gram matrices are
/// well-conditioned at test sizes, so the cutoff only has to separate
/// numerical noise from structure.
pub const PINV_CUTOFF: f64 = 1e-10;

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseOperator { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseOperator::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        DenseOperator { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseOperator {
        let mut t = DenseOperator::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseOperator) -> DenseOperator {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = DenseOperator::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "apply shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Kronecker product of two dense matrices.
    pub fn kron(&self, other: &DenseOperator) -> DenseOperator {
        let mut out = DenseOperator::zeros(self.rows * other.rows, self.cols * other.cols);
        for i1 in 0..self.rows {
            for j1 in 0..self.cols {
                let a = self.get(i1, j1);
                if a == 0.0 {
                    continue;
                }
                for i2 in 0..other.rows {
                    for j2 in 0..other.cols {
                        out.set(
                            i1 * other.rows + i2,
                            j1 * other.cols + j2,
                            a * other.get(i2, j2),
                        );
                    }
                }
            }
        }
        out
    }

    /// Largest absolute entry difference against another matrix of the same
    /// shape (test helper).
    pub fn max_abs_diff(&self, other: &DenseOperator) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// View as an `nalgebra` matrix for factorization-based checks.
    pub fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Copies an `nalgebra` matrix back into the row-major layout.
    pub fn from_na(m: &DMatrix<f64>) -> DenseOperator {
        let mut out = DenseOperator::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }
}

/// Dense expansion of a single factor.
pub fn dense_factor(f: &Factor) -> DenseOperator {
    match *f {
        Factor::OnesRow(m) => DenseOperator::from_rows(1, m, vec![1.0; m]),
        Factor::Identity(m) => DenseOperator::identity(m),
        Factor::Subtraction(m) => {
            let mut s = DenseOperator::zeros(m - 1, m);
            for i in 0..m - 1 {
                s.set(i, 0, 1.0);
                s.set(i, i + 1, -1.0);
            }
            s
        }
        Factor::SubtractionPinv(m) => {
            let inv = 1.0 / m as f64;
            let mut p = DenseOperator::zeros(m, m - 1);
            for j in 0..m - 1 {
                for i in 0..m {
                    p.set(i, j, if i == j + 1 { inv - 1.0 } else { inv });
                }
            }
            p
        }
        Factor::ScaledOnesCol(m) => DenseOperator::from_rows(m, 1, vec![1.0 / m as f64; m]),
        Factor::Scalar => DenseOperator::identity(1),
    }
}

/// Exact Kronecker expansion of an operator. Rejects instances whose row or
/// column count exceeds [`DENSE_SIZE_LIMIT`].
pub fn densify(op: &KronOperator) -> Result<DenseOperator> {
    for dim in [op.rows(), op.cols()] {
        if dim > DENSE_SIZE_LIMIT {
            return Err(Error::TooLargeForDense { cells: dim, limit: DENSE_SIZE_LIMIT });
        }
    }
    let mut out = DenseOperator::identity(1);
    for f in op.factors() {
        out = out.kron(&dense_factor(f));
    }
    Ok(out)
}

/// Dense measurement covariance Σ_A = H·Hᵀ for the marginal on `A`
/// (the 1×1 matrix [1] when `A` is empty).
pub fn dense_sigma(schema: &Schema, a: &AttrSet) -> Result<DenseOperator> {
    let h = densify(&crate::kronop::measurement_operator(schema, a))?;
    Ok(h.matmul(&h.transpose()))
}

/// Vertically stacks the dense residual operators of `sets` (in the given
/// order) into one measurement matrix B.
pub fn stacked_residuals(schema: &Schema, sets: &[AttrSet]) -> Result<DenseOperator> {
    let d: u128 = schema.universe_size();
    if d > DENSE_SIZE_LIMIT {
        return Err(Error::TooLargeForDense { cells: d, limit: DENSE_SIZE_LIMIT });
    }
    let d = d as usize;
    let blocks: Vec<DenseOperator> = sets
        .iter()
        .map(|a| densify(&crate::kronop::residual_operator(schema, a)))
        .collect::<Result<_>>()?;
    let total_rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut out = DenseOperator::zeros(total_rows, d);
    let mut r0 = 0;
    for b in &blocks {
        for i in 0..b.rows() {
            for j in 0..d {
                out.set(r0 + i, j, b.get(i, j));
            }
        }
        r0 += b.rows();
    }
    Ok(out)
}

/// Block-diagonal noise covariance for a list of (AttrSet, σ²) pairs, with
/// blocks σ²·Σ_A in the given order. Matches the row layout of
/// [`stacked_residuals`] over the same sets.
pub fn block_sigma(schema: &Schema, plan: &[(AttrSet, f64)]) -> Result<DenseOperator> {
    let blocks: Vec<DenseOperator> = plan
        .iter()
        .map(|(a, _)| dense_sigma(schema, a))
        .collect::<Result<_>>()?;
    let n: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut out = DenseOperator::zeros(n, n);
    let mut r0 = 0;
    for (b, (_, s2)) in blocks.iter().zip(plan) {
        for i in 0..b.rows() {
            for j in 0..b.cols() {
                out.set(r0 + i, r0 + j, s2 * b.get(i, j));
            }
        }
        r0 += b.rows();
    }
    Ok(out)
}

/// Largest diagonal entry of Σ_i B_iᵀ Σ_i⁻¹ B_i — the dense privacy cost of
/// running the given mechanisms together. Errors on a singular covariance.
pub fn dense_pcost(mechanisms: &[(DenseOperator, DenseOperator)]) -> Result<f64> {
    if mechanisms.is_empty() {
        return Ok(0.0);
    }
    let d = mechanisms[0].0.cols();
    let mut total = DMatrix::<f64>::zeros(d, d);
    for (b, sigma) in mechanisms {
        if b.cols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: b.cols() });
        }
        let bm = b.to_na();
        let chol = sigma
            .to_na()
            .cholesky()
            .ok_or_else(|| Error::Solver("singular covariance in dense_pcost".into()))?;
        let x = chol.solve(&bm); // Σ⁻¹ B
        total += bm.transpose() * x;
    }
    Ok((0..d).map(|i| total[(i, i)]).fold(f64::NEG_INFINITY, f64::max))
}

/// Pseudo-inverse of a symmetric PSD matrix via eigendecomposition with the
/// [`PINV_CUTOFF`] relative eigenvalue cutoff.
fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let lambda_max = sym.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let mut inv = DVector::zeros(n);
    for i in 0..n {
        let l = sym.eigenvalues[i];
        inv[i] = if l.abs() > PINV_CUTOFF * lambda_max { 1.0 / l } else { 0.0 };
    }
    &sym.eigenvectors * DMatrix::from_diagonal(&inv) * sym.eigenvectors.transpose()
}

/// Dense best-linear-unbiased estimate of the queries `W·x` from the
/// measurements `y = B·x + N(0, Σ)`:
///
/// estimate = W (BᵀΣ⁻¹B)† BᵀΣ⁻¹ y,  covariance = W (BᵀΣ⁻¹B)† Wᵀ.
///
/// Requires every row of W to lie in the row space of B for unbiasedness;
/// callers in this crate guarantee that by construction.
pub fn dense_blue(
    w: &DenseOperator,
    b: &DenseOperator,
    sigma: &DenseOperator,
    y: &[f64],
) -> Result<(Vec<f64>, DenseOperator)> {
    if w.cols() != b.cols() {
        return Err(Error::DimensionMismatch { expected: b.cols(), actual: w.cols() });
    }
    if y.len() != b.rows() || sigma.rows() != b.rows() || sigma.cols() != b.rows() {
        return Err(Error::DimensionMismatch { expected: b.rows(), actual: y.len() });
    }
    let bm = b.to_na();
    let wm = w.to_na();
    let chol = sigma
        .to_na()
        .cholesky()
        .ok_or_else(|| Error::Solver("singular covariance in dense_blue".into()))?;
    let sigma_inv_b = chol.solve(&bm);
    let info = bm.transpose() * &sigma_inv_b; // BᵀΣ⁻¹B
    let info_pinv = sym_pinv(&info);
    let yv = DVector::from_column_slice(y);
    let est = &wm * &info_pinv * sigma_inv_b.transpose() * yv;
    let cov = &wm * info_pinv * wm.transpose();
    Ok((est.as_slice().to_vec(), DenseOperator::from_na(&cov)))
}
