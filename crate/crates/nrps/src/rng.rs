//! Deterministic substream RNG.
//!
//! Every (purpose, replication, day, link) tuple maps to its own ChaCha
//! stream, so policies compared under common random numbers observe identical
//! demand shocks and adding or removing a policy never shifts anyone's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PURPOSE_SHOCK: u64 = 1;
const PURPOSE_THETA0: u64 = 2;
const PURPOSE_RANDOM_POLICY: u64 = 3;
const PURPOSE_SCENARIO: u64 = 4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded family of independent substreams.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    base: u64,
}

impl Streams {
    pub fn new(base_seed: u64) -> Self {
        Streams { base: base_seed }
    }

    pub fn base_seed(&self) -> u64 {
        self.base
    }

    fn keyed(&self, purpose: u64, rep: u32, day: u32, link: u64) -> ChaCha8Rng {
        let key = splitmix64(splitmix64(self.base ^ purpose.wrapping_mul(0xa076_1d64_78bd_642f)) ^ (rep as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(((day as u64) << 32) | link);
        rng
    }

    /// Demand shock on link (i, j) for one replication and day.
    pub fn shock(&self, rep: u32, day: u32, i: usize, j: usize, n: usize) -> ChaCha8Rng {
        self.keyed(PURPOSE_SHOCK, rep, day, (i * n + j) as u64)
    }

    /// Initial estimate draw for link (i, j); shared by all learning policies
    /// within a replication.
    pub fn theta0(&self, rep: u32, i: usize, j: usize, n: usize) -> ChaCha8Rng {
        self.keyed(PURPOSE_THETA0, rep, 0, (i * n + j) as u64)
    }

    /// Daily guess of the random policy for link (i, j).
    pub fn random_policy(&self, rep: u32, day: u32, i: usize, j: usize, n: usize) -> ChaCha8Rng {
        self.keyed(PURPOSE_RANDOM_POLICY, rep, day, (i * n + j) as u64)
    }

    /// Scenario parameter sampling; `tag` distinguishes the sampled fields.
    pub fn scenario(&self, tag: u32) -> ChaCha8Rng {
        self.keyed(PURPOSE_SCENARIO, 0, tag, 0)
    }
}
