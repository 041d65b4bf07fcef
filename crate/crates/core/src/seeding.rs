//! Deterministic seed derivation and per-row random streams.
//!
//! A dataset row draws from a ChaCha stream keyed by `(seed, purpose)` with
//! the row index as the stream number. Row `i` therefore sees the same
//! random values no matter how many rows are generated or in which order
//! threads touch them: datasets of different sizes under one seed are nested
//! by construction, and parallel generation is reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a tag (replicate index,
/// purpose id, ...). Chained mixes keep distinct tags well separated.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ mix(tag.wrapping_add(0x51_7c_c1_b7_27_22_0a_95)))
}

/// RNG for a `(seed, purpose)` pair, positioned on stream `row`.
pub fn row_rng(seed: u64, purpose: u64, row: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(derive(seed, purpose));
    rng.set_stream(row);
    rng
}

/// RNG for a `(seed, purpose)` pair without a row structure.
pub fn stream_rng(seed: u64, purpose: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(seed, purpose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive(7, 3), derive(7, 3));
        assert_ne!(derive(7, 3), derive(7, 4));
        assert_ne!(derive(7, 3), derive(8, 3));
    }

    #[test]
    fn row_streams_are_independent_of_generation_order() {
        let a: f64 = row_rng(42, 1, 10).gen();
        // Draw other rows first; row 10 must be unaffected.
        let _: f64 = row_rng(42, 1, 0).gen();
        let b: f64 = row_rng(42, 1, 10).gen();
        assert_eq!(a, b);
    }
}
