//! Closed-loop Monte-Carlo evaluation.
//!
//! Batteries evolve continuously (clipped to the grid cap) while channels
//! are drawn i.i.d. from the channel grid. Tabulated policies look up the
//! action of the ladder state just below the current battery, so a table
//! computed on the grid is always feasible.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::dp::{battery_update, Mdp, Policy, StateGrid};
use crate::error::{domain, Result};
use crate::perframe::{PerFrameInput, PerFrameSolution};
use crate::stats;
use crate::Bs;

/// A rule choosing the frame's solution from the full-budget input
/// (`budget = B/T + E`) and the channel index.
pub trait FramePolicy {
    fn decide(&self, input: &PerFrameInput, channel_idx: usize) -> Result<PerFrameSolution>;
}

impl<F> FramePolicy for F
where
    F: Fn(&PerFrameInput, usize) -> Result<PerFrameSolution>,
{
    fn decide(&self, input: &PerFrameInput, channel_idx: usize) -> Result<PerFrameSolution> {
        self(input, channel_idx)
    }
}

/// A DP policy table replayed on continuous batteries.
#[derive(Clone, Copy, Debug)]
pub struct TablePolicy<'a> {
    mdp: &'a Mdp,
    policy: &'a Policy,
}

impl<'a> TablePolicy<'a> {
    pub fn new(mdp: &'a Mdp, policy: &'a Policy) -> Result<Self> {
        if policy.action.len() != mdp.n_states() {
            return Err(domain("policy table does not match the MDP"));
        }
        Ok(Self { mdp, policy })
    }

    pub fn state_index(&self, battery: [f64; 2], channel_idx: usize) -> usize {
        let g = self.mdp.grid();
        g.index([g.project(0, battery[0]), g.project(1, battery[1])], channel_idx)
    }
}

impl FramePolicy for TablePolicy<'_> {
    fn decide(&self, input: &PerFrameInput, channel_idx: usize) -> Result<PerFrameSolution> {
        let s = self.state_index(input.battery, channel_idx);
        Ok(*self.mdp.solution(s, self.policy.action[s]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub n_frames: usize,
    pub seed: u64,
    /// Battery at the first frame, J; clipped to the cap.
    pub initial_battery: [f64; 2],
    /// Keep every user's per-frame rate (for CDFs).
    pub keep_user_rates: bool,
    pub keep_trace: bool,
    /// Batches for the standard error estimate.
    pub n_batches: usize,
}

impl SimConfig {
    pub fn new(n_frames: usize, seed: u64) -> Self {
        Self {
            n_frames,
            seed,
            initial_battery: [0.0; 2],
            keep_user_rates: false,
            keep_trace: false,
            n_batches: 20,
        }
    }
}

/// One simulated frame; batteries are at frame start.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub frame: usize,
    pub bs: Bs,
    pub alpha: f64,
    pub p_tilde: f64,
    pub p: [f64; 2],
    pub battery: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSummary {
    pub n_frames: usize,
    /// Frame-averaged sum-rate, bits/s/Hz.
    pub avg_sum_rate: f64,
    pub avg_alpha: f64,
    /// Batch-means standard error of `avg_sum_rate`.
    pub std_error: f64,
    /// Per-frame rate of each user, user 1 then user 2 for every frame.
    pub user_rates: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

pub fn evaluate_policy_mc(grid: &StateGrid, policy: &dyn FramePolicy, cfg: &SimConfig) -> Result<SimSummary> {
    if cfg.n_frames == 0 {
        return Err(domain("n_frames must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = grid.channel().sampler()?;
    let cap = grid.cap();
    let arrival = grid.arrival();
    let mut battery = [
        cfg.initial_battery[0].clamp(0.0, cap[0]),
        cfg.initial_battery[1].clamp(0.0, cap[1]),
    ];
    let mut rates = Vec::with_capacity(cfg.n_frames);
    let mut alpha_sum = 0.0;
    let mut user_rates = Vec::new();
    let mut trace = Vec::new();
    for frame in 0..cfg.n_frames {
        let j = draw.sample(&mut rng);
        let input = grid.input_at(battery, j);
        let sol = policy.decide(&input, j)?;
        if cfg.keep_user_rates {
            user_rates.extend_from_slice(&sol.user_rates(&input));
        }
        if cfg.keep_trace {
            trace.push(TraceRow {
                frame,
                bs: sol.bs,
                alpha: sol.alpha,
                p_tilde: sol.p_tilde,
                p: sol.p,
                battery,
            });
        }
        rates.push(sol.sum_rate);
        alpha_sum += sol.alpha;
        battery = battery_update(battery, &sol, &input.row_powers, arrival, grid.frame_length(), cap)?;
    }
    Ok(SimSummary {
        n_frames: cfg.n_frames,
        avg_sum_rate: stats::mean(&rates),
        avg_alpha: alpha_sum / cfg.n_frames as f64,
        std_error: stats::batch_means_stderr(&rates, cfg.n_batches),
        user_rates,
        trace,
    })
}
