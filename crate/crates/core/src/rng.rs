//! Keyed random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 generator seeded by
//! hashing the run seed together with the draw's position (replica, level,
//! branch, sample). The draws therefore do not depend on evaluation order,
//! and parallel and sequential runs agree bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `seed` and a key path into one 64-bit value.
pub fn stream_key(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |h, &k| mix(h ^ mix(k)))
}

/// A generator for the stream at `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, path))
}
