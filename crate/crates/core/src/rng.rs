//! Explicitly seeded random streams.
//!
//! A stream is split into independent children by index so that parallel
//! workers (records, epochs, examples) draw reproducible noise regardless of
//! scheduling.

use rand::distributions::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream `index`; depends only on this stream's seed, not on how
    /// much of it has been consumed.
    pub fn split(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        Open01.sample(&mut self.rng)
    }

    /// Uniform draw on [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.open01()
    }

    /// Gumbel(location, scale) by inverse CDF.
    pub fn gumbel(&mut self, location: f64, scale: f64) -> f64 {
        let u = self.open01();
        location - scale * libm::log(-libm::log(u))
    }
}
