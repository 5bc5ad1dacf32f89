//! Reproducible random streams.
//!
//! A [`RngStream`] is a `(seed, stream)` pair. The same pair always yields the
//! same ChaCha8 sequence; distinct stream indices select disjoint ChaCha
//! streams under the same key, so substreams are independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    /// Child stream `index` of this stream. Children of different parents never
    /// share a key because the parent's stream index is mixed into the seed.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x9E37_79B9_7F4A_7C15))),
            stream: index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
