//! Seeded, splittable randomness.
//!
//! Every sampler in the crate takes a [`RandomSource`] by reference and builds
//! its own generator from it, so a source can be handed to several consumers
//! without shared mutable state. Sub-streams come from [`RandomSource::split`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child source for sub-task `k`. Distinct `k` give distinct ChaCha streams
    /// under the same key.
    pub fn split(&self, k: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(splitmix64(self.stream) ^ k.wrapping_mul(0xd6e8_feb8_6659_fd93)),
        }
    }

    /// Fresh generator positioned at the start of this source's stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Uniform draw on the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 53 random bits, centred in their cell so 0 and 1 are unreachable
    let bits = rng.next_u64() >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
