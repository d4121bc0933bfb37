//! Seed derivation for independent deterministic RNG streams.
//!
//! Every randomized operation takes one `u64` seed; internal sub-streams
//! (per epoch, per question, per pipeline stage) are derived with a
//! SplitMix64-style mixer rather than by drawing from a shared RNG, so that
//! parallel workers can build their own generator from `(seed, key)` without
//! any cross-thread draw ordering, and adding draws to one stage never shifts
//! another stage's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream key into an independent seed
/// (SplitMix64 finalizer; avalanches every input bit).
pub fn mix_seed(seed: u64, key: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(key.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cheap, stable tag for naming streams: FNV-1a of the label.
pub fn stream_tag(label: &str) -> u64 {
    crate::corpus::tokenize::fnv1a64(label.as_bytes())
}

/// The crate's RNG for everything randomized: small-round ChaCha, seeded
/// explicitly. Never use thread-local or OS randomness in library code.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for a named sub-stream of `seed`.
pub fn stream_rng(seed: u64, label: &str, key: u64) -> ChaCha8Rng {
    rng(mix_seed(mix_seed(seed, stream_tag(label)), key))
}
