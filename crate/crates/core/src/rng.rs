//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by `(seed, round, component,
//! role, tag)`. The address is mixed into a ChaCha stream id, so any draw can
//! be replayed in isolation and in any order. Sequential, direct and
//! distributed executions that use the same address see the same randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which family of operators a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Gradient-difference operators `C_m^k`.
    C,
    /// Control-variate operators `U_m^k`.
    U,
    /// Model-update operator `R^k`.
    R,
    /// Synthetic problem generation.
    Problem,
    /// Monte-Carlo validators and test probes.
    Probe,
}

impl Role {
    fn code(self) -> u64 {
        match self {
            Role::C => 1,
            Role::U => 2,
            Role::R => 3,
            Role::Problem => 4,
            Role::Probe => 5,
        }
    }
}

/// Component address of a draw: a single `m`, or one draw shared by all `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Joint,
    Index(usize),
}

impl Component {
    fn code(self) -> u64 {
        match self {
            Component::Joint => u64::MAX,
            Component::Index(m) => m as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for one addressed draw. Distinct addresses give independent
    /// streams; the same address always gives the same stream.
    pub fn rng(&self, round: usize, component: Component, role: Role, tag: u32) -> ChaCha8Rng {
        let mut h = splitmix(round as u64);
        h = splitmix(h ^ component.code());
        h = splitmix(h ^ role.code());
        h = splitmix(h ^ tag as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(h);
        rng
    }
}
