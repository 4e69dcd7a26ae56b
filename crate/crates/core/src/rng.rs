//! Counter-based random streams.
//!
//! Every draw is a pure function of `(master seed, purpose, repetition)`: the
//! ChaCha key holds the master seed and purpose tag, the ChaCha stream id is
//! the repetition index. Repetitions can run in any order on any thread.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimSeed {
    pub master: u64,
    pub rep: u64,
}

/// Independent sub-streams used within one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Trajectory = 1,
    Photons = 2,
    Scan = 3,
    Synthetic = 4,
}

impl SimSeed {
    pub fn new(master: u64, rep: u64) -> Self {
        Self { master, rep }
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master.to_le_bytes());
        key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.rep);
        rng
    }
}

/// Master seed for sub-experiment `index` of kind `tag`, mixed with splitmix64.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exponential waiting time with the given rate (> 0).
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln() / rate
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}
