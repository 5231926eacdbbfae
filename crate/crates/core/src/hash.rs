//! Deterministic hashing and seeded randomness.
//!
//! The hash is XXH64. Its output is fixed by the published reference
//! implementation, so values computed here are stable across platforms,
//! releases and runs. The random stream is ChaCha8 seeded from a [`Seed`],
//! which is likewise portable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh64::xxh64;

use crate::types::Seed;

/// The generator used for every seeded random choice in the crate.
pub type SeededRng = ChaCha8Rng;

/// XXH64 of `bytes` under `seed`.
pub fn stable_hash(bytes: &[u8], seed: Seed) -> u64 {
    xxh64(bytes, seed.0)
}

/// Maps a 64-bit hash onto `[0, 1)` using its top 53 bits, so every output
/// is exactly representable and strictly below one.
pub fn unit_interval(hash: u64) -> f64 {
    (hash >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn seeded_rng(seed: Seed) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore};

    // Reference values from the canonical XXH64 implementation.
    const XXH64_EMPTY_SEED0: u64 = 0xef46_db37_51d8_e999;
    const XXH64_ABC_SEED0: u64 = 0x44bc_2cf5_ad77_0999;
    const XXH64_ABC_SEED1: u64 = 0xbea9_ca81_9932_8908;

    #[test]
    fn golden_values() {
        assert_eq!(stable_hash(b"", Seed(0)), XXH64_EMPTY_SEED0);
        assert_eq!(stable_hash(b"abc", Seed(0)), XXH64_ABC_SEED0);
        assert_eq!(stable_hash(b"abc", Seed(1)), XXH64_ABC_SEED1);
        assert_ne!(stable_hash(b"abc", Seed(0)), stable_hash(b"abc", Seed(1)));
    }

    #[test]
    fn deterministic() {
        let a = stable_hash(b"user-1|ad-9", Seed(42));
        let b = stable_hash(b"user-1|ad-9", Seed(42));
        assert_eq!(a, b);
    }

    #[test]
    fn avalanche() {
        let mut rng = seeded_rng(Seed(7));
        let trials = 10_000;
        let mut flipped = 0u64;
        for _ in 0..trials {
            let mut buf = [0u8; 16];
            rng.fill_bytes(&mut buf);
            let before = stable_hash(&buf, Seed(0));
            let bit = rng.random_range(0..128);
            buf[bit / 8] ^= 1 << (bit % 8);
            let after = stable_hash(&buf, Seed(0));
            flipped += u64::from((before ^ after).count_ones());
        }
        let mean = flipped as f64 / trials as f64;
        // An ideal 64-bit hash flips 32 bits on average; require at least 20 ± 6.
        assert!(mean >= 20.0 - 6.0, "mean flipped bits {mean}");
        assert!((mean - 32.0).abs() < 1.0, "mean flipped bits {mean}");
    }

    #[test]
    fn rng_streams_match() {
        let mut a = seeded_rng(Seed(99));
        let mut b = seeded_rng(Seed(99));
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn unit_interval_bounds() {
        assert_eq!(unit_interval(0), 0.0);
        assert!(unit_interval(u64::MAX) < 1.0);
        assert_eq!(unit_interval(1 << 63), 0.5);
    }
}
