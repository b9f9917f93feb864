//! Seeded random streams.
//!
//! Every random quantity comes from a ChaCha8 stream. The 256-bit key is
//! expanded from `(master seed, domain)` with SplitMix64 and the ChaCha stream
//! id is the item index (sample number, replicate number, ...). Two items never
//! share a stream, so results do not depend on how work is scheduled.
//!
//! Normal variates use inversion: `Phi^-1((k + 0.5) / 2^53)` with `k` the top
//! 53 bits of one 64-bit output.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::normal::inverse_cdf;

/// Independent purposes drawing from the same master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Science tables (covariates, potential outcomes).
    Sample,
    /// Treatment assignments for a given sample.
    Assignment,
    /// Free-standing draws (diagnostics, tests).
    Auxiliary,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Sample => 0x5341_4d50_4c45_0001,
            Domain::Assignment => 0x4153_5347_4e4d_0002,
            Domain::Auxiliary => 0x4155_5849_4c52_0003,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One reproducible random stream.
#[derive(Debug, Clone)]
pub struct Substream(ChaCha8Rng);

impl Substream {
    pub fn new(master: u64, domain: Domain, index: u64) -> Self {
        let mut state = master ^ domain.tag();
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        inverse_cdf(self.uniform())
    }

    /// Fair coin from the top bit of one 32-bit output.
    pub fn coin(&mut self) -> bool {
        self.0.next_u32() >> 31 == 1
    }
}
