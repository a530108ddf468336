//! Deterministic randomness plumbing.
//!
//! Every randomized component takes an optional `u64` seed. A given seed must
//! reproduce a run bit-for-bit, so independent consumers (key generation,
//! nonce streams per driver, data generation, shuffles) each derive their own
//! stream from the master seed plus a domain tag instead of sharing one RNG.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Derives a child seed from a master seed and a list of domain tags.
///
/// Mixing is splitmix64 over the concatenation, which is plenty to decorrelate
/// streams that differ in a single tag. Not cryptographic; the derived seeds
/// feed ChaCha20 which does the heavy lifting.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    for &tag in tags {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(tag);
        state = splitmix64(state);
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for a seed, or an entropy-seeded one when no seed is given.
pub fn seeded_rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_rng(rand::thread_rng()).expect("thread_rng never fails"),
    }
}

/// Collapses an optional seed to a concrete one, drawing from entropy when
/// absent, so derived streams can always be reported and replayed.
pub fn materialize_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| rand::thread_rng().gen())
}
