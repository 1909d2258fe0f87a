//! The select step: symbolic cost model and noise-scale optimization.
//!
//! A plan assigns one Gaussian noise variance σ²_A to every attribute set in
//! the downward closure of the workload. Because residual queries for
//! distinct sets are orthogonal, both the privacy cost and every marginal's
//! reconstruction variance are simple separable functions of the σ²_A:
//!
//! * privacy cost  = Σ_A p_A / σ²_A with p_A = ∏_{i∈A} (m_i−1)/m_i,
//! * per-cell variance of marginal A = Σ_{A′⊆A} varcoef(A, A′) · σ²_{A′}.
//!
//! The coefficients are computed once, exactly, in rational arithmetic
//! ([`CostModel`]); floating point enters only at the solver boundary.
//! Minimizing a weighted sum of variances under a privacy budget has a
//! closed form; minimizing the maximum weighted variance is a convex
//! program solved here by a log-barrier interior-point method over the
//! precision variables t_A = 1/σ²_A, in which the budget is linear.

use std::collections::BTreeMap;

use num::{BigInt, BigRational};
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::schema::{AttrSet, Schema, Workload};

/// Exact coefficient type used throughout the cost model.
pub type Rational = BigRational;

/// Default KKT-residual tolerance for the max-variance solver.
pub const DEFAULT_MAXVAR_TOL: f64 = 1e-7;

/// Strength of the sum-of-variances regularizer added to the max-variance
/// objective. Max-variance optima can be non-unique (flat faces); the
/// regularizer makes the solver return the minimum-total-variance optimum,
/// deterministically, while moving the objective by a relative O(1e−9).
const MAXVAR_REGULARIZER: f64 = 1e-9;

fn ratio(num: i64, den: u64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Rational → f64 at the solver boundary. Coefficient magnitudes in this
/// crate are far inside f64 range; treat any non-finite conversion as a bug.
fn rat_to_f64(r: &Rational) -> f64 {
    let v = r.to_f64().expect("rational-to-float conversion failed");
    assert!(v.is_finite(), "rational coefficient out of f64 range");
    v
}

/// Compensated (Neumaier) summation: the error of each addition is carried
/// in a correction term, keeping long mixed-magnitude sums accurate to a few
/// ulps — needed for the 1e−12 budget-tightness guarantee.
fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Exact privacy-cost and variance coefficients for one workload.
///
/// Holds, for every attribute set in the workload closure (sorted by size
/// then lexicographically):
///
/// * `pcoef(A)` — the privacy-cost coefficient p_A,
/// * `varcoef(A, A′)` — the contribution of σ²_{A′} to the per-cell
///   variance of the reconstructed marginal on A,
/// * `covcoef(A, A′)` — the analogous contribution to the covariance of two
///   cells of that marginal that differ in every attribute of A.
///
/// All coefficients are exact rationals built level-by-level (each set from
/// a one-smaller parent in O(1) multiplications), so construction time is
/// proportional to the closure size and independent of the universe size.
#[derive(Debug, Clone)]
pub struct CostModel {
    schema: Schema,
    workload: Workload,
    closure: Vec<AttrSet>,
    pos: BTreeMap<AttrSet, usize>,
    cells: Vec<u128>,
    /// pfrac[A] = ∏_{i∈A} (m_i−1)/m_i — equals both p_A and the leading
    /// variance factor of the set itself.
    pfrac: Vec<Rational>,
    /// invsq[A] = ∏_{i∈A} 1/m_i².
    invsq: Vec<Rational>,
    /// negfrac[A] = ∏_{i∈A} (−1/m_i).
    negfrac: Vec<Rational>,
}

/// Builds the exact cost model for a workload of marginals.
pub fn build_cost_model(schema: &Schema, workload: &Workload) -> Result<CostModel> {
    workload.validate_against(schema)?;
    let mut closure: Vec<AttrSet> = workload.closure().into_iter().collect();
    closure.sort_by_key(|a| (a.len(), a.indices().to_vec()));
    let pos: BTreeMap<AttrSet, usize> =
        closure.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();

    let n = closure.len();
    let mut cells = Vec::with_capacity(n);
    let mut pfrac: Vec<Rational> = Vec::with_capacity(n);
    let mut invsq: Vec<Rational> = Vec::with_capacity(n);
    let mut negfrac: Vec<Rational> = Vec::with_capacity(n);
    for (i, a) in closure.iter().enumerate() {
        cells.push(a.cell_count(schema));
        if a.is_empty() {
            pfrac.push(Rational::one());
            invsq.push(Rational::one());
            negfrac.push(Rational::one());
            continue;
        }
        // Drop the largest index to find the parent one level down; the
        // closure is downward closed, and the (size, lex) sort puts every
        // parent before its children.
        let last = *a.indices().last().expect("non-empty set");
        let parent = a.minus(&AttrSet::new(vec![last]));
        let pi = *pos.get(&parent).expect("closure is downward closed");
        debug_assert!(pi < i);
        let m = schema.size(last) as i64;
        pfrac.push(&pfrac[pi] * ratio(m - 1, m as u64));
        invsq.push(&invsq[pi] * ratio(1, (m * m) as u64));
        negfrac.push(&negfrac[pi] * ratio(-1, m as u64));
    }

    Ok(CostModel {
        schema: schema.clone(),
        workload: workload.clone(),
        closure,
        pos,
        cells,
        pfrac,
        invsq,
        negfrac,
    })
}

impl CostModel {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    /// The workload closure, sorted by set size then lexicographically.
    pub fn closure(&self) -> &[AttrSet] {
        &self.closure
    }

    fn idx(&self, a: &AttrSet) -> Result<usize> {
        self.pos
            .get(a)
            .copied()
            .ok_or_else(|| Error::InvalidAttrSet(format!("{a} is not in the workload closure")))
    }

    /// Number of cells of the marginal on `a`.
    pub fn cell_count(&self, a: &AttrSet) -> Result<u128> {
        Ok(self.cells[self.idx(a)?])
    }

    /// Privacy-cost coefficient p_A = ∏_{i∈A} (m_i−1)/m_i.
    pub fn pcoef(&self, a: &AttrSet) -> Result<&Rational> {
        Ok(&self.pfrac[self.idx(a)?])
    }

    /// Contribution of σ²_`source` to the per-cell variance of the
    /// reconstructed marginal on `target`.
    pub fn varcoef(&self, target: &AttrSet, source: &AttrSet) -> Result<Rational> {
        if !source.is_subset_of(target) {
            return Err(Error::NotSubset {
                subset: source.to_string(),
                superset: target.to_string(),
            });
        }
        let rest = target.minus(source);
        Ok(&self.pfrac[self.idx(source)?] * &self.invsq[self.idx(&rest)?])
    }

    /// Contribution of σ²_`source` to the covariance of two cells of the
    /// marginal on `target` that differ in every attribute of `target`.
    pub fn covcoef(&self, target: &AttrSet, source: &AttrSet) -> Result<Rational> {
        if !source.is_subset_of(target) {
            return Err(Error::NotSubset {
                subset: source.to_string(),
                superset: target.to_string(),
            });
        }
        let rest = target.minus(source);
        Ok(&self.negfrac[self.idx(source)?] * &self.invsq[self.idx(&rest)?])
    }

    /// Exact objective coefficients of the weighted sum of variances:
    /// v_B = Σ_i w_i · cells(A_i) · varcoef(A_i, B), indexed like
    /// [`CostModel::closure`]. Workload weights are ignored; `weights`
    /// supplies one multiplier per workload entry.
    pub fn sum_variance_coeffs_exact(&self, weights: &[f64]) -> Result<Vec<Rational>> {
        self.check_weights(weights)?;
        let mut v = vec![Rational::zero(); self.closure.len()];
        for (entry, &w) in self.workload.entries().iter().zip(weights) {
            let w_rat = Rational::from_float(w)
                .ok_or_else(|| Error::InvalidWorkload("non-finite weight".into()))?;
            let cells = Rational::from_integer(BigInt::from(self.cells[self.idx(&entry.attrs)?]));
            let scale = w_rat * cells;
            for b in entry.attrs.subsets() {
                let j = self.idx(&b)?;
                v[j] += &scale * self.varcoef(&entry.attrs, &b)?;
            }
        }
        Ok(v)
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.workload.len() {
            return Err(Error::InvalidWorkload(format!(
                "expected {} weights, got {}",
                self.workload.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::InvalidWorkload(format!("weight {w} is not a positive real")));
        }
        Ok(())
    }

    /// Per-cell variance coefficient rows of the workload marginals against
    /// the closure, as floats: row i has entries varcoef(A_i, B).
    fn variance_rows(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.closure.len();
        let mut rows = Vec::with_capacity(self.workload.len());
        for entry in self.workload.entries() {
            let mut row = vec![0.0; n];
            for b in entry.attrs.subsets() {
                row[self.idx(&b)?] = rat_to_f64(&self.varcoef(&entry.attrs, &b)?);
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

/// The two built-in regular loss functions. Weights are per workload entry,
/// in workload order, and must be positive. Weight c_i *multiplies* the
/// variance of marginal i in the sum-of-variances loss Σ_i c_i·(sum of cell
/// variances of marginal i), and *divides* it in the max-variance loss
/// max_i Var_i/c_i.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    WeightedSumOfVariances { weights: Vec<f64> },
    MaxWeightedVariance { weights: Vec<f64> },
}

impl LossSpec {
    /// Unit-weight sum of variances for a workload of `len` marginals.
    pub fn sum_of_variances(len: usize) -> Self {
        LossSpec::WeightedSumOfVariances { weights: vec![1.0; len] }
    }

    /// Unit-weight max variance for a workload of `len` marginals.
    pub fn max_variance(len: usize) -> Self {
        LossSpec::MaxWeightedVariance { weights: vec![1.0; len] }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            LossSpec::WeightedSumOfVariances { weights } => weights,
            LossSpec::MaxWeightedVariance { weights } => weights,
        }
    }
}

/// A fully specified noise allocation: one σ²_A per closure set, plus its
/// privacy cost Σ_A p_A/σ²_A and the loss value the solver optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Noise variance per attribute set, covering the workload closure.
    pub sigma2: BTreeMap<AttrSet, f64>,
    /// Σ_A p_A/σ²_A for this allocation.
    pub total_pcost: f64,
    /// Value of the optimized loss at this allocation.
    pub predicted_loss: f64,
}

impl Plan {
    /// Noise variance for one attribute set.
    pub fn sigma2(&self, a: &AttrSet) -> Result<f64> {
        self.sigma2
            .get(a)
            .copied()
            .ok_or_else(|| Error::InvalidPlan(format!("no noise scale for {a}")))
    }

    /// Scales every σ²_A by `factor` (> 0). Privacy cost scales by
    /// 1/factor and every variance-based loss by factor.
    pub fn scaled(&self, factor: f64) -> Result<Plan> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidPlan(format!("scale factor {factor} must be positive")));
        }
        Ok(Plan {
            sigma2: self.sigma2.iter().map(|(a, s)| (a.clone(), s * factor)).collect(),
            total_pcost: self.total_pcost / factor,
            predicted_loss: self.predicted_loss * factor,
        })
    }
}

/// Recomputes Σ_A p_A/σ²_A for a plan against a model (compensated sum).
pub fn compute_pcost(model: &CostModel, plan: &Plan) -> Result<f64> {
    let mut terms = Vec::with_capacity(model.closure.len());
    for (i, a) in model.closure.iter().enumerate() {
        let s2 = plan.sigma2(a)?;
        if !(s2.is_finite() && s2 > 0.0) {
            return Err(Error::InvalidPlan(format!("σ² for {a} must be positive, got {s2}")));
        }
        terms.push(rat_to_f64(&model.pfrac[i]) / s2);
    }
    Ok(neumaier_sum(terms))
}

/// Per-cell variance of the reconstructed marginal on `target` under `plan`.
pub fn marginal_variance(model: &CostModel, plan: &Plan, target: &AttrSet) -> Result<f64> {
    let mut terms = Vec::new();
    for b in target.subsets() {
        terms.push(rat_to_f64(&model.varcoef(target, &b)?) * plan.sigma2(&b)?);
    }
    Ok(neumaier_sum(terms))
}

/// Covariance of two cells of the marginal on `target` that differ in every
/// attribute of `target`, under `plan`.
pub fn marginal_covariance(model: &CostModel, plan: &Plan, target: &AttrSet) -> Result<f64> {
    let mut terms = Vec::new();
    for b in target.subsets() {
        terms.push(rat_to_f64(&model.covcoef(target, &b)?) * plan.sigma2(&b)?);
    }
    Ok(neumaier_sum(terms))
}

fn check_budget(c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidBudget(format!("privacy budget {c} must be a positive real")));
    }
    Ok(())
}

/// Minimizes the weighted sum of variances Σ_i c_i·(cell variances of
/// marginal i) subject to privacy cost ≤ `c`, in closed form.
///
/// With v_B the aggregated objective coefficient of σ²_B and p_B its
/// privacy coefficient, Cauchy–Schwarz gives the optimum
/// T = (Σ_B √(v_B·p_B))²/c at σ²_B = √(T·p_B/(c·v_B)); the budget
/// constraint is tight. The returned plan satisfies Σ p/σ² = c to within
/// 1e−12 relative (a final exact rescale removes accumulated rounding).
pub fn solve_sum_of_variances(model: &CostModel, weights: &[f64], c: f64) -> Result<Plan> {
    check_budget(c)?;
    let v_exact = model.sum_variance_coeffs_exact(weights)?;
    let n = model.closure.len();
    let mut v = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for (i, a) in model.closure.iter().enumerate() {
        // Every closure set is a subset of some workload marginal, so every
        // v_B is strictly positive for a marginal workload; a zero would
        // mean the model and workload disagree.
        if !v_exact[i].is_positive() {
            return Err(Error::InvalidWorkload(format!(
                "objective coefficient for {a} is not positive; \
                 closure and workload are inconsistent"
            )));
        }
        v.push(rat_to_f64(&v_exact[i]));
        p.push(rat_to_f64(&model.pfrac[i]));
    }

    let k: f64 = neumaier_sum((0..n).map(|i| (v[i] * p[i]).sqrt()));
    // σ²_B = √(T·p_B/(c·v_B)) with T = K²/c simplifies to (K/c)·√(p_B/v_B).
    let mut sigma2: Vec<f64> = (0..n).map(|i| (k / c) * (p[i] / v[i]).sqrt()).collect();

    // Polish: rescale so the recomputed budget is exact to rounding.
    let pcost = neumaier_sum((0..n).map(|i| p[i] / sigma2[i]));
    let adjust = pcost / c;
    for s in sigma2.iter_mut() {
        *s *= adjust;
    }
    let total_pcost = neumaier_sum((0..n).map(|i| p[i] / sigma2[i]));
    let predicted_loss = neumaier_sum((0..n).map(|i| v[i] * sigma2[i]));

    Ok(Plan {
        sigma2: model.closure.iter().cloned().zip(sigma2).collect(),
        total_pcost,
        predicted_loss,
    })
}

/// Minimizes max_i Var_i/c_i subject to privacy cost ≤ `c`.
///
/// Solved as a convex program in the precisions t_B = 1/σ²_B — variances
/// are convex (sums of a/t terms) and the budget Σ p_B·t_B ≤ c is linear —
/// by a log-barrier interior-point method with damped Newton centering.
/// The returned plan has a tight budget (1e−9 relative or better) and a
/// KKT stationarity/complementarity residual at most `tol`; non-convergence
/// within the iteration cap is an explicit error carrying the residuals.
///
/// The problem is solved once at unit budget and rescaled: scaling every
/// t_B by c maps the budget-1 optimum to the budget-c optimum exactly.
pub fn solve_max_variance(model: &CostModel, weights: &[f64], c: f64, tol: f64) -> Result<Plan> {
    check_budget(c)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidBudget(format!("tolerance {tol} must be positive")));
    }
    model.check_weights(weights)?;

    let t_unit = solve_max_variance_unit(model, weights, tol)?;
    let n = model.closure.len();
    let sigma2: Vec<f64> = t_unit.iter().map(|t| 1.0 / (t * c)).collect();
    let p: Vec<f64> = model.pfrac.iter().map(rat_to_f64).collect();
    let total_pcost = neumaier_sum((0..n).map(|i| p[i] / sigma2[i]));

    let plan = Plan {
        sigma2: model.closure.iter().cloned().zip(sigma2).collect(),
        total_pcost,
        predicted_loss: 0.0,
    };
    let predicted_loss = max_weighted_variance(model, &plan, weights)?;
    Ok(Plan { predicted_loss, ..plan })
}

/// max_i Var_i/c_i for a plan: the max-variance loss value.
pub fn max_weighted_variance(model: &CostModel, plan: &Plan, weights: &[f64]) -> Result<f64> {
    model.check_weights(weights)?;
    let mut worst = f64::NEG_INFINITY;
    for (entry, &w) in model.workload.entries().iter().zip(weights) {
        worst = worst.max(marginal_variance(model, plan, &entry.attrs)? / w);
    }
    Ok(worst)
}

/// Interior-point core: minimize max_i Σ_B a_iB/t_B over the unit-budget
/// simplex slice {t > 0, Σ p_B·t_B ≤ 1}, with an epigraph variable s and a
/// tiny sum-of-variances regularizer for uniqueness. Returns the precision
/// vector t (budget exactly tight after a final rescale).
fn solve_max_variance_unit(model: &CostModel, weights: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = model.closure.len();
    let k = model.workload.len();
    let p: Vec<f64> = model.pfrac.iter().map(rat_to_f64).collect();
    let rows = model.variance_rows()?;
    // a[i][B] = varcoef(A_i, B)/c_i — the weighted per-cell variance rows.
    let a: Vec<Vec<f64>> = rows
        .iter()
        .zip(weights)
        .map(|(row, &w)| row.iter().map(|x| x / w).collect())
        .collect();
    // Regularizer coefficients: cells-weighted column sums of `a`.
    let mut reg = vec![0.0f64; n];
    for (i, row) in a.iter().enumerate() {
        let cells = model.cells[model.idx(&model.workload.entries()[i].attrs)?] as f64;
        for (r, &x) in reg.iter_mut().zip(row) {
            *r += cells * x;
        }
    }
    for r in reg.iter_mut() {
        *r *= MAXVAR_REGULARIZER;
    }

    // Strictly feasible start: spend half the budget uniformly across sets,
    // epigraph comfortably above the worst variance.
    let mut t: Vec<f64> = p.iter().map(|pi| 0.5 / (n as f64 * pi)).collect();
    let var_of = |t: &[f64], i: usize| -> f64 {
        neumaier_sum(a[i].iter().zip(t).filter(|(x, _)| **x != 0.0).map(|(x, ti)| x / ti))
    };
    let mut s = 2.0 * (0..k).map(|i| var_of(&t, i)).fold(f64::NEG_INFINITY, f64::max);

    let mut eta = 1.0f64;
    let mut converged = false;
    let mut diag_newton = String::new();
    let mut last_kkt = f64::INFINITY;
    'outer: for _outer in 0..64 {
        // Damped Newton centering at the current barrier weight.
        for _inner in 0..120 {
            let (phi, grad, hess) = barrier_state(&t, s, eta, &a, &p, &reg)?;
            let step = solve_newton(&hess, &grad)?;
            let decrement = -dot(&grad, &step);
            // λ²/2 at machine scale: the iterate is the numerical center.
            if decrement <= 2e-12 {
                break;
            }
            // Backtracking line search on the barrier merit, restricted to
            // the interior (all t > 0, all slacks > 0). The merit is of
            // order eta·f0, so near the center genuine decreases fall below
            // f64 resolution; the noise allowance keeps full Newton steps
            // acceptable there (the domain checks still protect us).
            let noise = 1e-14 * phi.abs();
            let mut alpha = 1.0f64;
            let mut accepted = false;
            while alpha > 1e-18 {
                let cand_t: Vec<f64> =
                    t.iter().zip(&step).map(|(ti, di)| ti + alpha * di).collect();
                let cand_s = s + alpha * step[n];
                if interior(&cand_t, cand_s, &a, &p) {
                    let cand_phi = barrier_merit(&cand_t, cand_s, eta, &a, &p, &reg);
                    if cand_phi <= phi - 0.25 * alpha * decrement + noise {
                        t = cand_t;
                        s = cand_s;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                diag_newton = format!(", line search stalled at eta={eta:.3e}");
                break;
            }
            // Once accepted steps no longer move the iterate, further
            // Newton work at this barrier weight is numerical churn.
            let moved = alpha
                * step
                    .iter()
                    .zip(t.iter().chain(std::iter::once(&s)))
                    .map(|(d, x)| (d / x.abs().max(1e-300)).abs())
                    .fold(0.0f64, f64::max);
            if moved <= 1e-14 {
                break;
            }
        }

        // Certify the iterate directly: recover multipliers by least
        // squares and measure stationarity + complementarity. The
        // certificate is independent of eta, so the solver stops at the
        // first barrier stage whose center is demonstrably optimal to tol.
        let kkt = ls_kkt_residual(&t, s, &a, &p, &reg)?;
        last_kkt = kkt;
        if kkt <= tol {
            converged = true;
            break 'outer;
        }
        if eta >= 1e16 {
            return Err(Error::Solver(format!(
                "max-variance interior point stalled: kkt residual {kkt:.3e} > tol {tol:.3e} \
                 at eta={eta:.3e}{diag_newton}"
            )));
        }
        eta *= 10.0;
    }
    if !converged {
        return Err(Error::Solver(format!(
            "max-variance interior point hit the iteration cap: kkt residual {last_kkt:.3e}, \
             tol {tol:.3e}, eta {eta:.3e}{diag_newton}"
        )));
    }

    // Final polish: scale t to make the unit budget exactly tight. The
    // pre-polish slack is O(gap), so this moves the point by a vanishing
    // relative amount while pinning Σ p·t = 1 to rounding error.
    let spent = neumaier_sum(p.iter().zip(&t).map(|(pi, ti)| pi * ti));
    for ti in t.iter_mut() {
        *ti /= spent;
    }
    Ok(t)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn interior(t: &[f64], s: f64, a: &[Vec<f64>], p: &[f64]) -> bool {
    if t.iter().any(|&ti| !(ti > 0.0) || !ti.is_finite()) {
        return false;
    }
    let spent: f64 = p.iter().zip(t).map(|(pi, ti)| pi * ti).sum();
    if spent >= 1.0 {
        return false;
    }
    a.iter().all(|row| {
        let var: f64 = row.iter().zip(t).filter(|(x, _)| **x != 0.0).map(|(x, ti)| x / ti).sum();
        var < s
    })
}

/// Barrier merit value only (for line search).
fn barrier_merit(t: &[f64], s: f64, eta: f64, a: &[Vec<f64>], p: &[f64], reg: &[f64]) -> f64 {
    let f0 = s + neumaier_sum(reg.iter().zip(t).map(|(r, ti)| r / ti));
    let mut phi = eta * f0;
    for row in a {
        let var: f64 = row.iter().zip(t).filter(|(x, _)| **x != 0.0).map(|(x, ti)| x / ti).sum();
        phi -= (s - var).ln();
    }
    let spent: f64 = p.iter().zip(t).map(|(pi, ti)| pi * ti).sum();
    phi -= (1.0 - spent).ln();
    phi
}

/// Barrier merit, gradient, and Hessian at (t, s) for barrier weight eta.
/// Variable layout: x = (t_1..t_n, s).
#[allow(clippy::type_complexity)]
fn barrier_state(
    t: &[f64],
    s: f64,
    eta: f64,
    a: &[Vec<f64>],
    p: &[f64],
    reg: &[f64],
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let n = t.len();
    let dim = n + 1;
    let mut grad = vec![0.0f64; dim];
    let mut hess = vec![vec![0.0f64; dim]; dim];

    // Objective part: eta * (s + Σ reg_B/t_B).
    let f0 = s + neumaier_sum(reg.iter().zip(t).map(|(r, ti)| r / ti));
    let mut phi = eta * f0;
    grad[n] += eta;
    for b in 0..n {
        grad[b] += -eta * reg[b] / (t[b] * t[b]);
        hess[b][b] += 2.0 * eta * reg[b] / (t[b] * t[b] * t[b]);
    }

    // Variance epigraph constraints: g_i = Σ_B a_iB/t_B − s < 0.
    for row in a {
        let var: f64 = row.iter().zip(t).filter(|(x, _)| **x != 0.0).map(|(x, ti)| x / ti).sum();
        let slack = s - var;
        if !(slack > 0.0) {
            return Err(Error::Solver("barrier evaluated outside the interior".into()));
        }
        phi -= slack.ln();
        // ∇g_i has entries −a_iB/t_B² (t block) and −1 (s);
        // u = ∇g_i/slack accumulates into the gradient, u·uᵀ and the
        // diagonal curvature 2a/t³/slack into the Hessian.
        let mut u = vec![0.0f64; dim];
        for (b, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            u[b] = -x / (t[b] * t[b] * slack);
            hess[b][b] += 2.0 * x / (t[b] * t[b] * t[b] * slack);
        }
        u[n] = -1.0 / slack;
        for i in 0..dim {
            if u[i] == 0.0 {
                continue;
            }
            grad[i] += u[i];
            for j in 0..dim {
                if u[j] != 0.0 {
                    hess[i][j] += u[i] * u[j];
                }
            }
        }
    }

    // Budget constraint: g_b = Σ p_B t_B − 1 < 0.
    let spent: f64 = p.iter().zip(t).map(|(pi, ti)| pi * ti).sum();
    let bslack = 1.0 - spent;
    if !(bslack > 0.0) {
        return Err(Error::Solver("barrier evaluated outside the budget interior".into()));
    }
    phi -= bslack.ln();
    for b in 0..n {
        grad[b] += p[b] / bslack;
        for j in 0..n {
            hess[b][j] += p[b] * p[j] / (bslack * bslack);
        }
    }

    Ok((phi, grad, hess))
}

/// Solves H·d = −g by Cholesky with Jacobi equilibration; adds a scaled
/// diagonal shift if the factorization fails (barrier Hessians become
/// ill-conditioned at high barrier weight).
fn solve_newton(hess: &[Vec<f64>], grad: &[f64]) -> Result<Vec<f64>> {
    let dim = grad.len();
    let scale: Vec<f64> = (0..dim)
        .map(|i| {
            let h = hess[i][i];
            if h > 0.0 {
                1.0 / h.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut m = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = hess[i][j] * scale[i] * scale[j];
        }
    }
    let rhs = nalgebra::DVector::from_iterator(dim, (0..dim).map(|i| -grad[i] * scale[i]));

    let mut shift = 0.0f64;
    for _ in 0..8 {
        let mut shifted = m.clone();
        for i in 0..dim {
            shifted[(i, i)] += shift;
        }
        if let Some(chol) = shifted.cholesky() {
            let y = chol.solve(&rhs);
            return Ok((0..dim).map(|i| y[i] * scale[i]).collect());
        }
        shift = if shift == 0.0 { 1e-12 } else { shift * 100.0 };
    }
    Err(Error::Solver("Newton system not positive definite after regularization".into()))
}

/// KKT residual at an iterate, certified independently of the barrier:
/// multipliers are recovered by least squares (min over λ of
/// ‖∇f0 + Σ_j λ_j ∇g_j‖₂, clamped to λ ≥ 0) and the residual is the larger
/// of the relative stationarity defect and the relative complementarity
/// max_j |λ_j·g_j|. Reading duals off the barrier weights instead would put
/// a noise floor of order ε_machine/slack on the certificate; the
/// least-squares recovery measures the iterate itself.
fn ls_kkt_residual(t: &[f64], s: f64, a: &[Vec<f64>], p: &[f64], reg: &[f64]) -> Result<f64> {
    let n = t.len();
    let k = a.len();
    let dim = n + 1;

    // ∇f0 and the constraint slacks/gradients at the iterate.
    let mut f0_grad = vec![0.0f64; dim];
    f0_grad[n] = 1.0;
    for b in 0..n {
        f0_grad[b] = -reg[b] / (t[b] * t[b]);
    }
    let mut cons_grad = nalgebra::DMatrix::<f64>::zeros(dim, k + 1);
    let mut slacks = Vec::with_capacity(k + 1);
    for (j, row) in a.iter().enumerate() {
        let var: f64 = row.iter().zip(t).filter(|(x, _)| **x != 0.0).map(|(x, ti)| x / ti).sum();
        let slack = s - var;
        if !(slack > 0.0) {
            return Err(Error::Solver("KKT evaluation outside the interior".into()));
        }
        slacks.push(slack);
        for (b, &x) in row.iter().enumerate() {
            if x != 0.0 {
                cons_grad[(b, j)] = -x / (t[b] * t[b]);
            }
        }
        cons_grad[(n, j)] = -1.0;
    }
    let spent: f64 = p.iter().zip(t).map(|(pi, ti)| pi * ti).sum();
    let bslack = 1.0 - spent;
    if !(bslack > 0.0) {
        return Err(Error::Solver("KKT evaluation outside the budget interior".into()));
    }
    slacks.push(bslack);
    for b in 0..n {
        cons_grad[(b, k)] = p[b];
    }

    let rhs = nalgebra::DVector::from_iterator(dim, f0_grad.iter().map(|g| -g));
    let lambda = cons_grad
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Solver(format!("dual recovery failed: {e}")))?;

    // Stationarity with the clamped multipliers.
    let mut res = f0_grad;
    let mut comp = 0.0f64;
    for j in 0..=k {
        let lam = lambda[j].max(0.0);
        comp = comp.max(lam * slacks[j]);
        if lam == 0.0 {
            continue;
        }
        for b in 0..dim {
            let g = cons_grad[(b, j)];
            if g != 0.0 {
                res[b] += lam * g;
            }
        }
    }
    let stat = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let scale = s.abs().max(1.0);
    Ok((stat.max(comp)) / scale)
}

/// Minimizes total privacy cost subject to loss ≤ `gamma`.
///
/// Both built-in losses scale as 1/c along the optimal path, so the
/// budget-constrained solution at c = 1 rescales exactly: with L₁ the
/// unit-budget optimal loss, σ² scales by γ/L₁ and the resulting privacy
/// cost is L₁/γ.
pub fn solve_utility_constrained(model: &CostModel, loss: &LossSpec, gamma: f64) -> Result<Plan> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidBudget(format!("loss bound {gamma} must be a positive real")));
    }
    let unit = match loss {
        LossSpec::WeightedSumOfVariances { weights } => solve_sum_of_variances(model, weights, 1.0)?,
        LossSpec::MaxWeightedVariance { weights } => {
            solve_max_variance(model, weights, 1.0, DEFAULT_MAXVAR_TOL)?
        }
    };
    let plan = unit.scaled(gamma / unit.predicted_loss)?;
    // Refresh the derived quantities from the scaled noise scales.
    let total_pcost = compute_pcost(model, &plan)?;
    let predicted_loss = match loss {
        LossSpec::WeightedSumOfVariances { weights } => {
            let v = model.sum_variance_coeffs_exact(weights)?;
            neumaier_sum(
                model
                    .closure
                    .iter()
                    .enumerate()
                    .map(|(i, a)| rat_to_f64(&v[i]) * plan.sigma2[a]),
            )
        }
        LossSpec::MaxWeightedVariance { weights } => max_weighted_variance(model, &plan, weights)?,
    };
    Ok(Plan { total_pcost, predicted_loss, ..plan })
}

/// Root-mean-square error over all cells of the given workload marginals:
/// sqrt(Σ_A cells(A)·Var_A / Σ_A cells(A)). Weights play no role; this is
/// the unweighted summary metric. The workload must be covered by the
/// model's closure.
pub fn rmse(model: &CostModel, plan: &Plan, workload: &Workload) -> Result<f64> {
    let mut var_terms = Vec::with_capacity(workload.len());
    let mut total_cells = 0.0f64;
    for entry in workload.entries() {
        let cells = entry.attrs.cell_count(model.schema()) as f64;
        let var = marginal_variance(model, plan, &entry.attrs).map_err(|e| match e {
            Error::InvalidAttrSet(msg) => {
                Error::InvalidWorkload(format!("workload not covered by the cost model: {msg}"))
            }
            other => other,
        })?;
        var_terms.push(cells * var);
        total_cells += cells;
    }
    Ok((neumaier_sum(var_terms) / total_cells).sqrt())
}
