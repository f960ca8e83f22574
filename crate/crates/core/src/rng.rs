//! Seed handling.
//!
//! Every random decision in the pipeline flows from one master seed through
//! named sub-streams, so each component (data sampling, parameter init,
//! sampler noise, ...) can be reproduced in isolation. Sub-streams map onto
//! the ChaCha stream index: streams with the same key but different stream
//! ids are statistically independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named randomness consumers. The discriminant selects a disjoint block of
/// ChaCha stream ids, leaving room for a per-call index within each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Excerpt sampling and augmentation draws (indexed by training step).
    Data = 1,
    /// Parameter initialization.
    Init = 2,
    /// Training-time sigma and noise draws (indexed by training step).
    TrainNoise = 3,
    /// Inference sampler initial noise (indexed by chunk).
    Sampler = 4,
    /// Toy dataset synthesis (indexed by track).
    Toy = 5,
}

/// Derive the RNG for `(seed, stream, index)`.
///
/// Deterministic and stateless: the same triple always yields the same
/// generator, which is what makes training resumable from a step counter
/// alone.
pub fn sub_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}
