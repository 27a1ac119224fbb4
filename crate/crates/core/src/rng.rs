//! Seeded, splittable random source.
//!
//! Every chain owns one [`RandomSource`]. Independent chains are obtained with
//! [`RandomSource::split`], which keeps the seed and moves to a distinct ChaCha
//! stream. Sweeps use [`RandomSource::fork`] to derive child generators in a
//! fixed order so that the amount of randomness consumed by the parent does not
//! depend on what the children do.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator on stream `stream` of the same seed, starting from the beginning of that stream.
    pub fn split(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            rng,
        }
    }

    /// Child generator seeded from the next 64 bits of this one.
    pub fn fork(&mut self) -> Self {
        Self::new(self.rng.next_u64())
    }

    /// Uniform draw on [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
