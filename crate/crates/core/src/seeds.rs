//! Seed derivation tree.
//!
//! Every random stream in an experiment is derived from the master seed with
//! a label and an index, e.g. `derive(master, "fqi", day)`. Streams therefore
//! never share state and can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from `parent`, a stream label and an index.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    let mut h = fnv1a(label.as_bytes());
    h = mix(h ^ parent);
    mix(h ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Deterministic RNG for a derived stream.
pub fn rng(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, label, index))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

// splitmix64 finaliser
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
