//! Implicit Kronecker-product linear operators.
//!
//! Every query matrix in the crate — marginal operators, residual
//! operators, the per-marginal measurement matrix `H`, and the
//! reconstruction maps `U` — is a Kronecker product of tiny structured
//! factors, one per schema attribute. Operators are stored as factor lists
//! and applied with a per-factor reshape-multiply sweep; nothing here ever
//! materializes a dense matrix (dense expansion lives in [`crate::oracle`]
//! for testing).
//!
//! The subtraction matrix `S_m` is the (m−1)×m matrix whose first column is
//! all ones and whose remaining block is −I; its rows are the contrasts of
//! each later category against the first. Its pseudo-inverse (also a right
//! inverse) is `S_m† = (1/m)·[1ᵀ; 11ᵀ − m·I]`, an m×(m−1) matrix.

use crate::error::{Error, Result};
use crate::schema::{AttrSet, Schema};

/// One Kronecker factor. `m` is always the domain size of the attribute the
/// factor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    /// 1×m all-ones row (sums an attribute out).
    OnesRow(usize),
    /// m×m identity (keeps an attribute).
    Identity(usize),
    /// (m−1)×m subtraction matrix `S_m`.
    Subtraction(usize),
    /// m×(m−1) pseudo-inverse `S_m†`.
    SubtractionPinv(usize),
    /// m×1 column with every entry 1/m (spreads a coarser answer).
    ScaledOnesCol(usize),
    /// 1×1 identity (placeholder for attributes outside the marginal).
    Scalar,
}

impl Factor {
    pub fn rows(&self) -> usize {
        match *self {
            Factor::OnesRow(_) | Factor::Scalar => 1,
            Factor::Identity(m) | Factor::SubtractionPinv(m) | Factor::ScaledOnesCol(m) => m,
            Factor::Subtraction(m) => m - 1,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            Factor::OnesRow(m) | Factor::Identity(m) | Factor::Subtraction(m) => m,
            Factor::SubtractionPinv(m) => m - 1,
            Factor::ScaledOnesCol(_) | Factor::Scalar => 1,
        }
    }

    /// Factors that act as the identity in the apply sweep.
    fn is_noop(&self) -> bool {
        matches!(self, Factor::Identity(_) | Factor::Scalar)
    }
}

/// A Kronecker product of factors, one per schema attribute, applied
/// implicitly. Shape accessors are u128 because whole-universe operators on
/// wide schemas exceed u64; such operators are only ever applied inside the
/// dense oracle at toy sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KronOperator {
    factors: Vec<Factor>,
}

impl KronOperator {
    pub fn new(factors: Vec<Factor>) -> Self {
        assert!(
            factors.iter().all(|f| f.rows() >= 1 && f.cols() >= 1),
            "degenerate factor in Kronecker operator"
        );
        KronOperator { factors }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn rows(&self) -> u128 {
        self.factors.iter().fold(1u128, |acc, f| acc.saturating_mul(f.rows() as u128))
    }

    pub fn cols(&self) -> u128 {
        self.factors.iter().fold(1u128, |acc, f| acc.saturating_mul(f.cols() as u128))
    }

    /// Applies the operator to a vector; see [`kron_apply`].
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        kron_apply(self, v)
    }
}

/// The residual operator `R_A`: subtraction factors on the attributes of
/// `A`, all-ones rows elsewhere. Maps the full universe to the
/// `residual_row_count(A)` contrasts that carry exactly the information in
/// the marginal on `A` not present in any strict sub-marginal.
pub fn residual_operator(schema: &Schema, a: &AttrSet) -> KronOperator {
    KronOperator::new(
        (0..schema.len())
            .map(|i| {
                if a.contains(i) {
                    Factor::Subtraction(schema.size(i))
                } else {
                    Factor::OnesRow(schema.size(i))
                }
            })
            .collect(),
    )
}

/// The marginal operator `M_A`: identity factors on the attributes of `A`,
/// all-ones rows elsewhere. Maps the full universe to the marginal table.
pub fn marginal_operator(schema: &Schema, a: &AttrSet) -> KronOperator {
    KronOperator::new(
        (0..schema.len())
            .map(|i| {
                if a.contains(i) {
                    Factor::Identity(schema.size(i))
                } else {
                    Factor::OnesRow(schema.size(i))
                }
            })
            .collect(),
    )
}

/// The measurement operator `H = ⊗_{i∈A} S_{|A_i|}`, acting on the marginal
/// cell space (not the universe): `H · M_A = R_A`. Attributes outside `A`
/// contribute scalar placeholders.
pub fn measurement_operator(schema: &Schema, a: &AttrSet) -> KronOperator {
    KronOperator::new(
        (0..schema.len())
            .map(|i| {
                if a.contains(i) {
                    Factor::Subtraction(schema.size(i))
                } else {
                    Factor::Scalar
                }
            })
            .collect(),
    )
}

/// The reconstruction operator `U_{target←source}` taking the residual
/// answer on `source` into the cell space of the marginal on `target`:
/// `S†` factors on `source`, spread columns on `target ∖ source`, scalars
/// elsewhere. Satisfies `U_{t←s} = M_t · R_s†` as linear maps.
pub fn reconstruction_operator(
    schema: &Schema,
    target: &AttrSet,
    source: &AttrSet,
) -> Result<KronOperator> {
    if !source.is_subset_of(target) {
        return Err(Error::NotSubset {
            subset: source.to_string(),
            superset: target.to_string(),
        });
    }
    Ok(KronOperator::new(
        (0..schema.len())
            .map(|i| {
                if source.contains(i) {
                    Factor::SubtractionPinv(schema.size(i))
                } else if target.contains(i) {
                    Factor::ScaledOnesCol(schema.size(i))
                } else {
                    Factor::Scalar
                }
            })
            .collect(),
    ))
}

/// Applies a Kronecker operator to a vector with the standard per-factor
/// reshape-multiply sweep: the vector is viewed as a tensor of shape
/// (r_1, …, r_{t−1}, c_t, …, c_k) and each factor is contracted in turn.
/// Cost is O(ℓ·∏ sizes) scalar operations for ℓ non-identity factors; the
/// two-nonzeros-per-row structure of the subtraction factors gets a
/// dedicated kernel (one subtraction per output).
pub fn kron_apply(op: &KronOperator, v: &[f64]) -> Result<Vec<f64>> {
    let mut total_cols = 1usize;
    for f in op.factors() {
        total_cols = total_cols
            .checked_mul(f.cols())
            .ok_or(Error::DimensionMismatch { expected: usize::MAX, actual: v.len() })?;
    }
    if v.len() != total_cols {
        return Err(Error::DimensionMismatch { expected: total_cols, actual: v.len() });
    }

    let mut cur: Vec<f64> = v.to_vec();
    let mut left = 1usize; // product of row counts of already-applied factors
    for (t, f) in op.factors().iter().enumerate() {
        if f.is_noop() {
            left *= f.rows();
            continue;
        }
        let right: usize = op.factors()[t + 1..].iter().map(|g| g.cols()).product();
        let (r, c) = (f.rows(), f.cols());
        let mut next = vec![0.0f64; left * r * right];
        for p in 0..left {
            let inb = p * c * right; // base of input block (c slices of `right`)
            let outb = p * r * right; // base of output block (r slices)
            match *f {
                Factor::OnesRow(m) => {
                    let dst = &mut next[outb..outb + right];
                    for j in 0..m {
                        let src = &cur[inb + j * right..inb + (j + 1) * right];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Factor::Subtraction(m) => {
                    // Row i of S_m is e_0 − e_{i+1}: one subtraction per output.
                    for i in 0..m - 1 {
                        let o = outb + i * right;
                        let b = inb + (i + 1) * right;
                        for s in 0..right {
                            next[o + s] = cur[inb + s] - cur[b + s];
                        }
                    }
                }
                Factor::SubtractionPinv(m) => {
                    // Row 0 of S_m† is (1/m)·1ᵀ; row i ≥ 1 is (1/m)·1ᵀ − e_{i−1}.
                    let inv_m = 1.0 / m as f64;
                    for s in 0..right {
                        let mut sum = 0.0;
                        for j in 0..m - 1 {
                            sum += cur[inb + j * right + s];
                        }
                        next[outb + s] = sum * inv_m;
                    }
                    for i in 1..m {
                        let o = outb + i * right;
                        let b = inb + (i - 1) * right;
                        for s in 0..right {
                            next[o + s] = next[outb + s] - cur[b + s];
                        }
                    }
                }
                Factor::ScaledOnesCol(m) => {
                    let inv_m = 1.0 / m as f64;
                    for i in 0..m {
                        let o = outb + i * right;
                        for s in 0..right {
                            next[o + s] = cur[inb + s] * inv_m;
                        }
                    }
                }
                Factor::Identity(_) | Factor::Scalar => unreachable!("no-op factors are skipped"),
            }
        }
        cur = next;
        left *= r;
    }
    Ok(cur)
}
