//! Reference policies: conventional full-frame ZF-JT, greedy fractional JT
//! and fixed-BS fractional JT. All of them spend from the full budget
//! `A_k = B_k/T + E_k` and need no precomputation.

use core::fmt;

use crate::error::Result;
use crate::perframe::{jt_inequality, per_frame_greedy, per_stage_utility_for_bs, PerFrameInput, PerFrameSolution};
use crate::simulate::FramePolicy;
use crate::{Bs, User};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    ConventionalZfJt,
    Greedy,
    FixedBs(Bs),
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::ConventionalZfJt => f.write_str("conventional_zfjt"),
            BaselineKind::Greedy => f.write_str("greedy"),
            BaselineKind::FixedBs(k) => write!(f, "fixed_bs{}", k.number()),
        }
    }
}

/// ZF-JT over the whole frame with the budgets as per-BS caps.
pub fn conventional_zfjt(input: &PerFrameInput) -> PerFrameSolution {
    let full = input.with_full_budget();
    match jt_inequality(&full, Bs::One, User::One, 0.0) {
        Some((_, p, sum_rate)) => PerFrameSolution {
            bs: Bs::One,
            user: User::One,
            alpha: 0.0,
            p_tilde: 0.0,
            p,
            sum_rate,
        },
        None => PerFrameSolution::zero(),
    }
}

/// Fractional JT spending up to everything available this frame.
pub fn greedy_policy(input: &PerFrameInput, delta_alpha: f64) -> PerFrameSolution {
    per_frame_greedy(input, delta_alpha)
}

/// Fractional JT with the single-BS subframe pinned to BS `k`, full budgets.
pub fn fixed_bs_policy(k: Bs, input: &PerFrameInput, delta_alpha: f64) -> PerFrameSolution {
    per_stage_utility_for_bs(&input.with_full_budget(), k, delta_alpha).unwrap_or_else(PerFrameSolution::zero)
}

/// A baseline as a [`FramePolicy`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub delta_alpha: f64,
}

impl Baseline {
    pub fn new(kind: BaselineKind, delta_alpha: f64) -> Self {
        Self { kind, delta_alpha }
    }

    pub fn solve(&self, input: &PerFrameInput) -> PerFrameSolution {
        match self.kind {
            BaselineKind::ConventionalZfJt => conventional_zfjt(input),
            BaselineKind::Greedy => greedy_policy(input, self.delta_alpha),
            BaselineKind::FixedBs(k) => fixed_bs_policy(k, input, self.delta_alpha),
        }
    }
}

impl FramePolicy for Baseline {
    fn decide(&self, input: &PerFrameInput, _channel_idx: usize) -> Result<PerFrameSolution> {
        Ok(self.solve(input))
    }
}
