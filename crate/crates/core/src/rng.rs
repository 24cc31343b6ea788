//! Seeded, splittable random streams.
//!
//! Each named substream derives its own ChaCha20 key from the parent seed
//! and the name, so streams never depend on how many draws another stream
//! has made.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const ALGORITHM: &str = "chacha20";

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `name`.
    pub fn split(&self, name: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ fnv1a(name.as_bytes())))
    }

    /// Independent child stream keyed by `name` and an index (e.g. epoch).
    pub fn split_indexed(&self, name: &str, index: u64) -> Rng {
        Rng::new(splitmix64(self.split(name).seed ^ splitmix64(index)))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng as _;
        self.inner.random_range(0..n)
    }
}

impl RngCore for Rng {
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
