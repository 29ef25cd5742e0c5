//! Named, independent RNG streams derived from a master seed.
//!
//! Every random decision in a run draws from a stream identified by a name and
//! a short index path (round, client, seed slot). A stream's seed is
//!
//! ```text
//! s = splitmix64(master ^ fnv1a64(name)); for i in index: s = splitmix64(s ^ i)
//! ```
//!
//! and the generator is `ChaCha8Rng::seed_from_u64(s)`. Streams never share
//! state, so the draws a run makes do not depend on which other runs or
//! threads exist in the process.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(master: u64, name: &str, index: &[u64]) -> u64 {
    index
        .iter()
        .fold(splitmix64(master ^ fnv1a64(name)), |s, &i| splitmix64(s ^ i))
}

pub fn stream(master: u64, name: &str, index: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, name, index))
}

/// The streams of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn dataset(&self) -> StreamRng {
        stream(self.master, "dataset", &[])
    }

    pub fn sharding(&self) -> StreamRng {
        stream(self.master, "sharding", &[])
    }

    /// Seed for the server model's initialization.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.master, "init", &[])
    }

    pub fn cohort(&self, round: usize) -> StreamRng {
        stream(self.master, "cohort", &[round as u64])
    }

    /// Root seed carried by a client shard.
    pub fn client_seed(&self, client_id: usize) -> u64 {
        derive_seed(self.master, "client", &[client_id as u64])
    }

    /// Server-side fits for reverse distillation.
    pub fn reverse_fit(&self, round: usize, slot: usize) -> StreamRng {
        stream(self.master, "reverse", &[round as u64, slot as u64])
    }
}

/// Local minibatch order for a client in a round.
pub fn local_batches(client_seed: u64, round: usize) -> StreamRng {
    stream(client_seed, "local", &[round as u64])
}

/// Synthetic-data initialization and re-perturbation for a client in a round.
pub fn distill(client_seed: u64, round: usize) -> StreamRng {
    stream(client_seed, "distill", &[round as u64])
}
