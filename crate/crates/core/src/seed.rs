//! Counter-based seed splitting.
//!
//! Every random stream in an experiment is derived from a master seed and a
//! path of counters (method, seed index, episode, rollout, ...). Streams never
//! share state, so work can be reordered or parallelised without changing
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a counter path.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &c| splitmix64(acc ^ splitmix64(c.wrapping_add(0xA5A5))))
}

/// Generator for the stream at `path` below `parent`.
pub fn stream(parent: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(parent, path))
}

/// Stable numeric tag for a string label (FNV-1a), used to key streams by name.
pub fn tag(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}
