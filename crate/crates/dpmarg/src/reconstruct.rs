//! The reconstruct step: unbiased marginal estimates from noisy residuals.
//!
//! Because the residual queries decompose the workload orthogonally, the
//! best linear unbiased estimate of a marginal on A is a simple sum over
//! the subsets of A:
//!
//! q_A = Σ_{A′ ⊆ A} U_{A←A′} · y_{A′},
//!
//! where each U_{A←A′} is a Kronecker product of pseudoinverse and
//! averaging factors ([`crate::kronop::reconstruction_operator`]). This is
//! pure post-processing — it touches no raw data and consumes no privacy
//! budget — and it reproduces the generalized-least-squares answer exactly
//! (the property tests check this against a dense solver).
//!
//! Error moments come in closed form rather than from matrix algebra: the
//! estimate of each cell of A has variance
//!
//! Var = Σ_{A′ ⊆ A} σ²_{A′} · ∏_{i∈A′} (m_i−1)/m_i · ∏_{j∈A∖A′} 1/m_j²,
//!
//! identical across cells, and any two cells that differ in *every*
//! attribute of A share the covariance obtained by replacing the first
//! product with ∏_{i∈A′} (−1/m_i). Pairs that agree on some attributes
//! have other (larger) covariances; the scalar reported here is the
//! fully-differing case, which is the extreme one.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kronop::reconstruction_operator;
use crate::mechanism::{NoisyResidual, MAX_MEASURE_CELLS};
use crate::schema::{AttrSet, Schema, Workload};

/// An unbiased estimate of one marginal, with its exact error moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEstimate {
    pub attrset: AttrSet,
    /// Estimated counts, one per cell of the marginal (row-major, last
    /// attribute fastest).
    pub values: Vec<f64>,
    /// Variance of every cell estimate (identical across cells).
    pub cell_variance: f64,
    /// Covariance of any two cell estimates that differ in every attribute
    /// of the set (identical across all such pairs).
    pub pairwise_covariance: f64,
}

/// Σ over subsets of `target` of σ²·∏first(i) over the subset times
/// ∏ 1/m_j² over the rest, where `first` is chosen per moment.
fn moment_sum<F: Fn(usize) -> f64>(
    schema: &Schema,
    target: &AttrSet,
    sigma2: &BTreeMap<AttrSet, f64>,
    first: F,
) -> Result<f64> {
    // Neumaier-compensated accumulation keeps cancellation in the
    // covariance sum (signed terms) at the few-ulp level.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for subset in target.subsets() {
        let s2 = *sigma2
            .get(&subset)
            .ok_or_else(|| Error::MissingResidual(subset.to_string()))?;
        let mut term = s2;
        for &i in subset.indices() {
            term *= first(i);
        }
        for &j in target.minus(&subset).indices() {
            let m = schema.size(j) as f64;
            term *= 1.0 / (m * m);
        }
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    Ok(sum + comp)
}

/// Rebuilds the marginal on `target` from the residual answers of all its
/// subsets. Every subset of `target` must be present in `residuals`.
pub fn reconstruct(
    schema: &Schema,
    target: &AttrSet,
    residuals: &BTreeMap<AttrSet, NoisyResidual>,
) -> Result<MarginalEstimate> {
    target.validate(schema)?;
    let cells = target.cell_count(schema);
    if cells > MAX_MEASURE_CELLS {
        return Err(Error::InvalidAttrSet(format!(
            "marginal on {target} has {cells} cells, beyond the reconstruction limit"
        )));
    }
    let m = cells as usize;

    let mut values = vec![0.0f64; m];
    let mut sigma2: BTreeMap<AttrSet, f64> = BTreeMap::new();
    for subset in target.subsets() {
        let residual = residuals
            .get(&subset)
            .ok_or_else(|| Error::MissingResidual(subset.to_string()))?;
        let rows = subset.residual_row_count(schema) as usize;
        if residual.values.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, actual: residual.values.len() });
        }
        let u = reconstruction_operator(schema, target, &subset)?;
        let part = u.apply(&residual.values)?;
        for (acc, x) in values.iter_mut().zip(&part) {
            *acc += x;
        }
        sigma2.insert(subset, residual.sigma2);
    }

    let cell_variance = moment_sum(schema, target, &sigma2, |i| {
        let m = schema.size(i) as f64;
        (m - 1.0) / m
    })?;
    let pairwise_covariance = moment_sum(schema, target, &sigma2, |i| {
        let m = schema.size(i) as f64;
        -1.0 / m
    })?;

    Ok(MarginalEstimate { attrset: target.clone(), values, cell_variance, pairwise_covariance })
}

/// Reconstructs every marginal in the workload, in workload order. Each
/// marginal is rebuilt independently, so the calls run in parallel.
pub fn reconstruct_all(
    schema: &Schema,
    workload: &Workload,
    residuals: &BTreeMap<AttrSet, NoisyResidual>,
) -> Result<Vec<MarginalEstimate>> {
    workload
        .entries()
        .par_iter()
        .map(|entry| reconstruct(schema, &entry.attrs, residuals))
        .collect()
}
