//! Keyed random streams.
//!
//! Every random draw in a simulation comes from a stream identified by
//! `(root seed, domain, round, actor)`. Streams are independent of each other,
//! so changing how one actor consumes randomness never reshuffles the draws of
//! another, and protocols that differ only in how they aggregate see identical
//! device-side randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Dataset generation and partitioning.
    Data,
    /// Device selection at a server (actor = server).
    Activation,
    /// Epoch count and minibatch sampling on a device (actor = device).
    Edge,
    /// Arrival/processing delays of a device (actor = device).
    Latency,
    /// Monte Carlo studies outside a simulation.
    Study,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Data => 0x01,
            Domain::Activation => 0x02,
            Domain::Edge => 0x03,
            Domain::Latency => 0x04,
            Domain::Study => 0x05,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `(root, domain, round, actor)`.
pub fn stream_seed(root: u64, domain: Domain, round: u64, actor: u64) -> u64 {
    let mut h = splitmix64(root);
    h = splitmix64(h ^ domain.tag());
    h = splitmix64(h ^ round);
    splitmix64(h ^ actor)
}

pub fn stream(root: u64, domain: Domain, round: u64, actor: u64) -> SimRng {
    SimRng::seed_from_u64(stream_seed(root, domain, round, actor))
}
