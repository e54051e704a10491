//! Seeded randomness and the seed-derivation scheme used by every harness.
//!
//! Trials never share a generator. Each one gets a seed computed from the
//! master seed and its coordinates with [`derive_seed`], so a run produces
//! the same numbers no matter how trials are scheduled.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Portable, reproducible generator owned by a single trial.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub const fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `master` one SplitMix64 round per component.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_standard_normal(rng: &mut SeededRng, out: &mut [f64]) {
    for x in out {
        *x = StandardNormal.sample(rng);
    }
}

/// `rows × cols` matrix of i.i.d. N(0,1), filled in column-major order.
pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    fill_standard_normal(rng, m.as_mut_slice());
    m
}
