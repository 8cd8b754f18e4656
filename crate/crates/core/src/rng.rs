//! The one random generator used everywhere: ChaCha8 seeded from a `u64`.
//!
//! Named sub-streams are derived by mixing an FNV-1a hash of the stream name
//! into the seed, so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier recorded in sidecars; bump if the derivation below changes.
pub const GENERATOR: &str = "chacha8-fnv1a-v1";

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Independent stream for `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    seeded(seed ^ fnv1a(name).rotate_left(17))
}
