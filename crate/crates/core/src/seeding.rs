//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream whose
//! seed is derived from the master seed, a stage tag, and task indices.
//! Derivation is pure, so stage-wise CLI runs and the one-shot pipeline
//! reach identical streams, and reports can list every seed they used.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLD: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master`, a stage `tag`, and task indices.
pub fn derive_seed(master: u64, tag: &str, parts: &[u64]) -> u64 {
    // FNV-1a over the tag, then an avalanche chain absorbing each part.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = mix(master.wrapping_add(GOLD) ^ h);
    for &p in parts {
        state = mix(state ^ p.wrapping_add(GOLD));
    }
    state
}

/// The one RNG flavor used everywhere; seeded streams are stable across
/// platforms and runs.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
