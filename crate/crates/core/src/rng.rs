//! Seeded random streams.
//!
//! Every consumer of randomness owns a ChaCha8 stream derived from a master
//! seed and a stream id, so independent parts of a run never share state and
//! a run is reproducible from its master seed alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream ids used by the experiment pipeline.
pub mod stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const BATCH_INDEX: u64 = 4;
    pub const PAIR_NOISE: u64 = 5;
    pub const TIMESTEP: u64 = 6;
    pub const SUBSAMPLE: u64 = 7;
    /// Sampler streams are offset by the sample index.
    pub const SAMPLER_BASE: u64 = 1 << 32;
}

pub fn substream(master_seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

/// Mixes a seed with a tag so derived seeds for different purposes differ.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
