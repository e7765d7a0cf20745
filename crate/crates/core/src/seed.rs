//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of 64-bit words that
//! is folded through the SplitMix64 finalizer. Streams are therefore a pure
//! function of their coordinates and independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FOLD_INIT: u64 = 0x6A09_E667_F3BC_C909;

/// The SplitMix64 output function applied to `x + golden gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds an ordered list of words into one seed.
///
/// The word count is mixed in first so that `[a, b]` and `[a, b, 0]` differ.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = splitmix64(FOLD_INIT ^ parts.len() as u64);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// A reproducible generator for the stream named by `parts`.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}
