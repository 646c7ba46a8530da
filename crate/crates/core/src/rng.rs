//! Seeded random streams.
//!
//! Every random decision in the toolkit draws from a [`RandomSource`]. A
//! source is a 64-bit seed; a concrete generator is obtained by naming the
//! purpose of the stream. The generator is ChaCha8 keyed with the seed, and
//! the purpose label selects the ChaCha stream via a 64-bit FNV-1a hash, so
//! the same `(seed, label)` pair always yields the same sequence and distinct
//! labels yield independent sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    seed: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator dedicated to `purpose`.
    pub fn stream(&self, purpose: &str) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(purpose.as_bytes()));
        rng
    }

    /// A derived source, e.g. one per shadow model or per trial.
    pub fn child(&self, purpose: &str, index: u64) -> RandomSource {
        let mut h = fnv1a(purpose.as_bytes()) ^ self.seed.rotate_left(17);
        h ^= index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        RandomSource::new(splitmix(h))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
