//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the 64-bit seed and
//! positioned on the 64-bit ChaCha stream selected by `stream_id`. The
//! keystream is defined by the cipher, so a given `(seed, stream_id)` pair
//! yields the same draws on every platform and independently of how many
//! other streams exist or in which order they are consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pipeline stages that own a dedicated sub-stream of each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Geometry = 1,
    Deform = 2,
    Intensity = 3,
    Augment = 4,
}

/// SplitMix64 finalizer, used to derive seeds and stream ids.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` under `master_seed`.
pub fn sample_seed(master_seed: u64, index: u64) -> u64 {
    mix64(master_seed ^ mix64(index))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&mix64(seed).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream owned by `stage` of the sample seeded with `sample_seed`.
    pub fn for_stage(sample_seed: u64, stage: Stage) -> Self {
        Self::new(sample_seed, stage as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream; does not advance `self`.
    pub fn split(&self, tag: u64) -> Self {
        Self::new(self.seed, mix64(self.stream_id ^ mix64(tag.wrapping_add(1))))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
