//! Fractional joint transmission (JT) for two energy-harvesting base stations
//! serving two users.
//!
//! Each frame is split into a single-BS subframe (fraction `alpha`), during
//! which one BS serves one user while the other stores energy, followed by a
//! zero-forcing JT subframe. This crate holds the numerical core:
//!
//! - [`channel`]: 2x2 block-fading channel sampling and discretization.
//! - [`zf`]: zero-forcing precoder algebra.
//! - [`perframe`]: closed-form per-frame power allocation and the search over
//!   `alpha`, plus the inequality-constrained (KKT) variant.
//! - [`dp`]: discretized battery/channel MDP, relative value iteration and
//!   exact policy iteration.
//! - [`adp`]: feature-based approximate policy iteration with LSPE(beta).
//! - [`baselines`]: conventional ZF-JT, greedy and fixed-BS reference policies.
//! - [`simulate`]: closed-loop Monte-Carlo evaluation.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, configuration and
//! the CLI live in the `fjt-sim` companion crate.

#![no_std]

extern crate alloc;

pub mod adp;
pub mod baselines;
pub mod channel;
pub mod dp;
mod error;
mod math;
pub mod perframe;
pub mod simulate;
pub mod stats;
pub mod zf;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Base-station index. `One` and `Two` are printed as 1 and 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bs {
    One,
    Two,
}

impl Bs {
    pub const ALL: [Bs; 2] = [Bs::One, Bs::Two];

    pub fn index(self) -> usize {
        match self {
            Bs::One => 0,
            Bs::Two => 1,
        }
    }

    pub fn other(self) -> Bs {
        match self {
            Bs::One => Bs::Two,
            Bs::Two => Bs::One,
        }
    }

    pub fn from_index(i: usize) -> Option<Bs> {
        match i {
            0 => Some(Bs::One),
            1 => Some(Bs::Two),
            _ => None,
        }
    }

    /// 1-based number used in reports.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

/// User index. `One` and `Two` are printed as 1 and 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum User {
    One,
    Two,
}

impl User {
    pub const ALL: [User; 2] = [User::One, User::Two];

    pub fn index(self) -> usize {
        match self {
            User::One => 0,
            User::Two => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<User> {
        match i {
            0 => Some(User::One),
            1 => Some(User::Two),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

/// Mixes a base seed with a stream id so that independent workers get
/// decorrelated but reproducible RNG streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined word
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
