//! Seed derivation helpers. All randomness in the crate flows through
//! `ChaCha8Rng` streams derived from a root seed so results are reproducible
//! independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PcsRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> PcsRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser; mixes a seed with a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of `label`, used to derive label-keyed streams.
pub fn label_tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
