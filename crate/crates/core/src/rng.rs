//! Deterministic random-number substreams.
//!
//! Every stochastic routine in the crate takes a [`SimRng`]. Independent tasks get
//! their own stream, derived from a master seed and a key path such as
//! `[replicate, task]`, so results do not depend on how tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `(master, key[0], key[1], ...)`. Distinct key paths, including
/// paths that are prefixes of one another, give distinct streams.
pub fn substream(master: u64, key: &[u64]) -> SimRng {
    let mut stream = splitmix64(key.len() as u64 ^ 0x5eed_5eed_5eed_5eed);
    for &k in key {
        stream = splitmix64(stream ^ splitmix64(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Master seed plus a key path, extended as work is subdivided.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master: u64,
    pub path: Vec<u64>,
}

impl StreamKey {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            path: Vec::new(),
        }
    }

    pub fn child(&self, k: u64) -> Self {
        let mut path = self.path.clone();
        path.push(k);
        Self {
            master: self.master,
            path,
        }
    }

    pub fn rng(&self) -> SimRng {
        substream(self.master, &self.path)
    }
}
