//! Deterministic derivation of independent RNG streams from one master seed.
//!
//! Every stochastic component (policy sampling, model fitting, rollout anchor
//! sampling, ...) draws from its own tagged stream so that enabling or
//! disabling one component never perturbs the draws seen by another. This is
//! what makes the ratio-0 Dyna run bit-identical to the model-free run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a master seed and a stream tag.
///
/// FNV-1a over the tag, mixed with the master seed through SplitMix64.
/// Stable across platforms and releases (unlike `std`'s `DefaultHasher`).
pub fn child_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

/// A seeded ChaCha8 stream for the given tag.
pub fn child_rng(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, tag))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
