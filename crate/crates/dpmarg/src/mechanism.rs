//! The measure step: noisy residual answers.
//!
//! For an attribute set A with noise scale σ²_A, the base mechanism answers
//! the residual query with
//!
//! y_A = R_A·x + N(0, σ²_A·Σ_A),  Σ_A = H_A·H_Aᵀ,
//!
//! implemented without ever materializing x, R_A, or a covariance factor:
//! the marginal counts v = M_A·x come from one streaming pass over the
//! dataset, an i.i.d. standard normal vector z is drawn over the marginal's
//! cells, and the output is H_A·v + σ_A·H_A·z. Pushing white noise through
//! H_A yields exactly the N(0, σ²_A·Σ_A) law required.
//!
//! Noise is deterministic given a master seed: each attribute set gets its
//! own ChaCha20 stream keyed by a SHA-256 hash of a domain tag, the master
//! seed, and the set's indices, so measurements are reproducible,
//! independent across sets, and safe to run in parallel in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kronop::measurement_operator;
use crate::planner::Plan;
use crate::schema::{marginal_counts, AttrSet, Dataset};

/// Largest marginal (in cells) that measurement will materialize count and
/// noise vectors for.
pub const MAX_MEASURE_CELLS: u128 = 1 << 40;

/// One noisy residual answer: the attribute set, the noise scale it was
/// measured with, and the ∏(m_i−1) response values.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyResidual {
    pub attrset: AttrSet,
    pub sigma2: f64,
    pub values: Vec<f64>,
}

/// Deterministic noise supply for a whole run.
///
/// A `NoiseSource` holds only the master seed; [`NoiseSource::stream`]
/// derives an independent ChaCha20 generator per attribute set by hashing
/// `tag ‖ master_seed ‖ index count ‖ indices` with SHA-256 and using the
/// digest as the stream key. Identical seed, plan, and dataset therefore
/// reproduce bit-identical outputs regardless of thread scheduling, while
/// distinct attribute sets get cryptographically separated streams.
/// Standard normals are drawn via the ziggurat sampler of the `rand_distr`
/// crate's `StandardNormal`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSource {
    master_seed: u64,
}

impl NoiseSource {
    pub fn new(master_seed: u64) -> Self {
        NoiseSource { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// The dedicated generator for one attribute set. Calling this twice
    /// with the same set yields the same stream; independence across runs
    /// comes from varying the master seed.
    pub fn stream(&self, a: &AttrSet) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(b"dpmarg.noise.v1");
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update((a.len() as u64).to_le_bytes());
        for &i in a.indices() {
            hasher.update((i as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha20Rng::from_seed(seed)
    }
}

/// Measures the residual query on `a` with noise scale `sigma2`.
///
/// `sigma2 = 0` is the documented zero-noise hook (used by tests and the
/// CLI's plain tabulation mode): the output is exactly H_A·v, which is not
/// a private release.
pub fn measure(
    dataset: &Dataset,
    a: &AttrSet,
    sigma2: f64,
    noise: &NoiseSource,
) -> Result<NoisyResidual> {
    a.validate(dataset.schema())?;
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::InvalidPlan(format!(
            "noise scale for {a} must be a non-negative real, got {sigma2}"
        )));
    }
    let cells = a.cell_count(dataset.schema());
    if cells > MAX_MEASURE_CELLS {
        return Err(Error::InvalidAttrSet(format!(
            "marginal on {a} has {cells} cells, beyond the measurement limit"
        )));
    }
    let m = cells as usize;

    let counts = marginal_counts(dataset, a)?;
    let v: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let h = measurement_operator(dataset.schema(), a);
    let mut values = h.apply(&v)?;

    if sigma2 > 0.0 {
        let sigma = sigma2.sqrt();
        let mut rng = noise.stream(a);
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let hz = h.apply(&z)?;
        for (out, n) in values.iter_mut().zip(&hz) {
            *out += sigma * n;
        }
    }

    Ok(NoisyResidual { attrset: a.clone(), sigma2, values })
}

/// Measures every attribute set in the plan, in parallel, returning the
/// residuals in the plan's (sorted) key order. Each set draws from its own
/// noise stream, so the output is independent of scheduling.
pub fn measure_all(dataset: &Dataset, plan: &Plan, noise: &NoiseSource) -> Result<Vec<NoisyResidual>> {
    let jobs: Vec<(&AttrSet, f64)> = plan.sigma2.iter().map(|(a, &s)| (a, s)).collect();
    jobs.par_iter().map(|(a, s2)| measure(dataset, a, *s2, noise)).collect()
}
