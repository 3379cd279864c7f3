//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator seeded from a 64-bit value. Child
//! seeds are derived from `(master, namespace, index)` with a counter-based
//! construction:
//!
//! ```text
//! h     = fnv1a64(namespace)
//! seed  = splitmix64(splitmix64(master ^ h) + index)
//! ```
//!
//! The derivation is pure, so replicate `r` of any experiment can be
//! regenerated in isolation and replicates may run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of child `index` in `namespace` under `master`.
pub fn child_seed(master: u64, namespace: &str, index: u64) -> u64 {
    let base = splitmix64(master ^ fnv1a64(namespace.as_bytes()));
    splitmix64(base.wrapping_add(index))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_stream(master: u64, namespace: &str, index: u64) -> Stream {
    stream(child_seed(master, namespace, index))
}
