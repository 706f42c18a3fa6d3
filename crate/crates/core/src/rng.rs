//! Counter-based random streams.
//!
//! Every draw in a sweep comes from a ChaCha8 stream whose key is derived from
//! `(seed, iteration, step)` and whose stream id is the entity index. The
//! draws an entity sees therefore do not depend on which worker handles it or
//! in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies the sampler step (or other consumer) owning a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StepTag {
    Sticks = 1,
    Assign = 2,
    Latent = 3,
    Items = 4,
    Theta = 5,
    Alpha = 6,
    Init = 7,
    Simulate = 8,
    GapNull = 9,
    Regression = 10,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Factory for per-entity substreams under one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for one entity at one step of one iteration.
    pub fn stream(&self, iter: u64, tag: StepTag, entity: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut h = splitmix64(self.seed ^ splitmix64(iter ^ splitmix64(tag as u64)));
        for chunk in key.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(entity);
        rng
    }
}
