//! Seeded, splittable random streams.
//!
//! Every random decision in an experiment (data draws, partitions, fold
//! assignment) is taken from a [`SeededRng`] identified by `(seed, stream)`.
//! Substreams are derived by tag rather than by consuming the parent, so the
//! values a replication sees do not depend on how many siblings ran before it
//! or on which thread ran it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// ChaCha stream keyed by a 64-bit seed, positioned on a 64-bit stream id.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream. The result depends only on this stream's
    /// identity and `tag`, never on how much of this stream was consumed.
    pub fn substream(&self, tag: u64) -> SeededRng {
        SeededRng::new(self.seed, mix(self.stream ^ mix(tag.wrapping_add(0x5151_7f3a))))
    }

    /// Child stream keyed by a path of tags, e.g. `[replication, role]`.
    pub fn derive(&self, tags: &[u64]) -> SeededRng {
        tags.iter().fold(self.clone(), |rng, &t| rng.substream(t))
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
