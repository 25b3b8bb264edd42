//! Seeded random streams keyed by `(master seed, replicate, purpose)`.
//!
//! Every replicate of every study derives its own ChaCha8 key from the triple,
//! so replicates are independent and a run gives the same numbers whatever the
//! order or thread in which its replicates are evaluated.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    TrainCovariates,
    TestCovariates,
    TrainNoise,
    TestNoise,
    /// Extra draws for brute-force oracles and auxiliary estimators.
    Auxiliary(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::TrainCovariates => 1,
            Purpose::TestCovariates => 2,
            Purpose::TrainNoise => 3,
            Purpose::TestNoise => 4,
            Purpose::Auxiliary(k) => 0x1000 + u64::from(k),
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sub-index, e.g. to give each scenario of a study its own seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut s = master ^ splitmix64(&mut index.wrapping_add(0xA076_1D64_78BD_642F));
    splitmix64(&mut s)
}

/// A random stream with uniform and standard normal draws.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(master_seed: u64, replicate: u64, purpose: Purpose) -> Self {
        let mut state = master_seed;
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state) ^ replicate.wrapping_mul(0xD6E8_FEB8_6659_FD93),
            splitmix64(&mut state) ^ purpose.tag().wrapping_mul(0xCA5A_8264_3E6B_05C1),
            splitmix64(&mut state),
        ];
        let mut mix = words[1] ^ words[2];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&(w ^ splitmix64(&mut mix)).to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(key),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random bits, shifted to the midpoint of each cell so 0 and 1 never occur
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the Box-Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}
