//! Deterministic randomness plumbing.
//!
//! Every stochastic component draws from its own ChaCha12 stream keyed by
//! `(seed, purpose)`. Streams are independent, so adding draws to one purpose
//! (say, extra counterfactual sampling) never perturbs another (environment
//! noise), and a `(config, seed)` pair replays byte-identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// One stream per consumer of randomness inside a single run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    /// Context draws and outcome noise inside the simulated environment.
    EnvNoise = 0,
    /// Sampling the played action from the selected policy.
    PolicySampling = 1,
    /// Sampling counterfactual actions inside the per-round inner loop.
    Counterfactual = 2,
    /// Instance generation (class members, cost tables) from config seeds.
    InstanceBuild = 3,
    /// Standalone experiment drivers (oracle coverage trials, pools).
    Experiment = 4,
}

/// Deterministic stream for `purpose` under a 64-bit seed.
pub fn stream(seed: u64, purpose: Purpose) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Per-replicate seed derivation for sweeps: splitmix64 finalizer over the
/// base seed and replicate index. Keeps replicate streams disjoint without
/// any shared state between runs.
pub fn run_seed(base: u64, replicate: u64) -> u64 {
    let mut z = base
        .wrapping_add(replicate.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inverse-CDF draw from a finite probability vector. `probs` must be
/// nonnegative and sum to 1 up to simplex tolerance; the trailing index
/// absorbs any rounding slack so the draw always lands in range.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
