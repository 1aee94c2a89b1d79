//! Replayable random substreams.
//!
//! Every random draw in a trial comes from a ChaCha stream whose seed is a
//! hash of `(master seed, trial, purpose, agent, k)`. Two runs that agree on
//! those coordinates consume identical randomness regardless of execution
//! order or crypto mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a substream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Problem = 1,
    Weights = 2,
    InitialState = 3,
    Keygen = 4,
    Quantize = 5,
    Nonce = 6,
    Stepsize = 7,
    Gradient = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a list of coordinates into one 64-bit seed.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(master), |h, &c| splitmix64(h ^ splitmix64(c)))
}

/// Seed factory for a single trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
    trial: u64,
}

impl Streams {
    pub fn new(master: u64, trial: u64) -> Self {
        Self { master, trial }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    /// Trial-wide stream (weights, initial states).
    pub fn global(&self, purpose: Purpose) -> StreamRng {
        self.seeded(&[self.trial, purpose as u64])
    }

    /// Per-agent stream (key generation).
    pub fn agent(&self, purpose: Purpose, agent: usize) -> StreamRng {
        self.seeded(&[self.trial, purpose as u64, agent as u64])
    }

    /// Per-agent, per-iteration stream.
    pub fn step(&self, purpose: Purpose, agent: usize, k: usize) -> StreamRng {
        self.seeded(&[self.trial, purpose as u64, agent as u64, k as u64])
    }

    /// Seed for a per-agent stream, for APIs that take a raw seed.
    pub fn agent_seed(&self, purpose: Purpose, agent: usize) -> u64 {
        derive_seed(self.master, &[self.trial, purpose as u64, agent as u64])
    }

    fn seeded(&self, coords: &[u64]) -> StreamRng {
        StreamRng::seed_from_u64(derive_seed(self.master, coords))
    }
}

/// Experiment-wide stream that does not depend on the trial index.
pub fn experiment_stream(master: u64, purpose: Purpose) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, &[u64::MAX, purpose as u64]))
}
