//! Seed splitting.
//!
//! Every random draw in a run derives from one top-level seed. Children are
//! ChaCha8 streams keyed by `(seed, stream)`, so adding a consumer never
//! shifts the numbers seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream identifiers used across the crate.
pub mod streams {
    pub const SCENARIO: u64 = 1;
    pub const HELDOUT_SPLIT: u64 = 2;
    pub const INIT_FEATURE: u64 = 10;
    pub const INIT_CLASSIFIER: u64 = 11;
    pub const INIT_DISCRIMINATOR: u64 = 12;
    pub const INIT_CLASSWISE: u64 = 13;
    pub const BATCHES: u64 = 20;
    pub const TOY_INIT: u64 = 30;
    pub const VERIFY: u64 = 40;
}

/// A reproducible child generator for `(seed, stream)`.
pub fn child(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child of a child: used for per-index streams such as one class-wise
/// discriminator out of K.
pub fn child_indexed(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    child(seed, stream.wrapping_mul(1_000_003).wrapping_add(index + 1))
}
