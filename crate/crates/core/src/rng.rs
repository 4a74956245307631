//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 generator (`rand_chacha`). Child streams for a
//! `(replicate, iteration)` pair are seeded by a SplitMix64 mix of the parent
//! seed and the pair, so they depend on nothing else.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name recorded in report headers.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64); children via SplitMix64(seed, replicate, iteration)";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the child stream for `(replicate, iteration)` under `seed`.
pub fn derive_seed(seed: u64, replicate: u64, iteration: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ replicate) ^ iteration.rotate_left(32))
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for `(replicate, iteration)`; a pure function of
    /// this stream's seed and the pair, regardless of how much of this
    /// stream has been consumed.
    pub fn child(&self, replicate: u64, iteration: u64) -> RandomStream {
        RandomStream::new(derive_seed(self.seed, replicate, iteration))
    }

    /// Uniform index in `0..bound` (Lemire's method on 64-bit draws).
    pub fn index(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "index bound must be positive");
        let bound = bound as u64;
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let wide = u128::from(self.rng.next_u64()) * u128::from(bound);
            if (wide as u64) >= threshold {
                return (wide >> 64) as usize;
            }
        }
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RandomStream {
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
