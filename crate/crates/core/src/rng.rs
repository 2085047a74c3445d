//! Seeded substreams for reproducible parallel simulation.
//!
//! Every random entity (family, replication, bootstrap replicate, Monte
//! Carlo draw) gets its own ChaCha8 generator keyed by the master seed and a
//! tag path, so draws for entity `i` do not depend on how many entities exist
//! or on which worker produced them. Mixing uses the SplitMix64 finalizer,
//! the standard seed-expansion permutation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain-separation tags for substream derivation.
pub mod tags {
    pub const FAMILY: u64 = 0x01;
    pub const REPLICATION: u64 = 0x02;
    pub const MC_DRAW: u64 = 0x03;
    pub const BOOTSTRAP: u64 = 0x04;
    pub const SELECTION: u64 = 0x05;
    pub const MATCHING: u64 = 0x06;
    pub const CROSSOVER: u64 = 0x07;
    pub const SCORES: u64 = 0x08;
}

/// SplitMix64 finalizer: a bijective mixing permutation on `u64`.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a tag path.
pub fn mix(seed: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &tag in path {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// Creates an independent generator for the entity identified by `path`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, path))
}

/// FNV-1a hash of a label, for deriving per-scenario seed components. Stable
/// across platforms and releases, unlike `DefaultHasher`.
pub fn label_hash(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in label.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
