//! Deterministic seeding for ensembles.
//!
//! Trial `i` of a run with master seed `s` uses the seed
//!
//! ```text
//! z = s + 0x9E3779B97F4A7C15 * (i + 1)      (wrapping, mod 2^64)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! seed = z ^ (z >> 31)
//! ```
//!
//! which is the `(i + 1)`-th output of a SplitMix64 generator started at `s`.
//! The finalizer is a bijection and the golden-ratio increment is odd, so two
//! distinct trial indices never share a seed under the same master seed.
//! Each seed then keys a [`SimRng`] (ChaCha8).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `trial` of a run keyed by `master`.
pub fn derive_seed(master: u64, trial: u64) -> u64 {
    mix64(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(trial.wrapping_add(1))))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Generator for trial `trial` under `master`.
pub fn trial_rng(master: u64, trial: u64) -> SimRng {
    rng_from_seed(derive_seed(master, trial))
}
