//! Sweep runner: one job per (seed, E2) point, each job solving or training
//! every requested algorithm and scoring it with the same Monte-Carlo stream.

use std::time::Instant;

use fjt_core::adp::approximate_policy_iteration;
use fjt_core::baselines::{Baseline, BaselineKind};
use fjt_core::channel::{build_channel_grid, ChannelGrid};
use fjt_core::dp::{relative_value_iteration, Mdp, Policy, StageObjective, StateGrid};
use fjt_core::simulate::{evaluate_policy_mc, SimConfig, TablePolicy, TraceRow};
use fjt_core::{derive_seed, Bs};
use rayon::prelude::*;

use crate::config::{Algorithm, ConfigError, ExperimentConfig};

const SIM_STREAM: u64 = 1;
const ADP_STREAM: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("channel grid for seed {seed}: {source}")]
    Channel { seed: u64, source: fjt_core::Error },
    #[error("{algorithm} at seed {seed}, E2 = {e2} W: {source}")]
    Solve {
        algorithm: Algorithm,
        seed: u64,
        e2: f64,
        source: fjt_core::Error,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub algorithm: String,
    pub e1: f64,
    pub e2: f64,
    /// bits/s/Hz
    pub avg_sum_rate: f64,
    pub avg_alpha: f64,
    pub seed: u64,
    pub n_frames: usize,
    /// Solve/train plus evaluation time, s; zero unless timings are requested.
    pub wall_time: f64,
    /// Each user's realized rate in every frame, user 1 then user 2.
    pub user_rate_samples: Vec<f64>,
}

/// Optional artifacts collected alongside the metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub user_rates: bool,
    pub trace: bool,
    pub tables: bool,
    pub weights: bool,
    pub timings: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub seed: u64,
    pub e1: f64,
    pub e2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableRow {
    pub levels: [usize; 2],
    pub channel: usize,
    pub h: f64,
    /// Chosen budgets (A1, A2), W.
    pub budget: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub point: Point,
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdpWeights {
    pub point: Point,
    pub lambda_best: f64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub point: Point,
    pub algorithm: Algorithm,
    pub rows: Vec<TraceRow>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    /// Ordered by algorithm (config order), then E2, then seed.
    pub records: Vec<MetricsRecord>,
    pub tables: Vec<PolicyTable>,
    pub weights: Vec<AdpWeights>,
    pub traces: Vec<Trace>,
    /// Channel grid of each seed, in config order.
    pub grids: Vec<(u64, ChannelGrid)>,
}

/// Runs every algorithm on every (seed, E2) point and returns the metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let opts = RunOptions { user_rates: true, ..RunOptions::default() };
    Ok(run_experiment_with(cfg, &opts)?.records)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let params = cfg.channel.params();
    let grids = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            build_channel_grid(&params, cfg.grid.channel_states, cfg.channel.calibration_samples, seed)
                .map(|g| (seed, g))
                .map_err(|source| HarnessError::Channel { seed, source })
        })
        .collect::<Result<Vec<_>>>()?;

    let e2s = cfg.e2_values();
    let jobs: Vec<(usize, usize)> = (0..e2s.len()).flat_map(|i| (0..grids.len()).map(move |j| (i, j))).collect();
    let results = jobs
        .par_iter()
        .map(|&(i, j)| {
            let (seed, ref channel) = grids[j];
            let point = Point { seed, e1: cfg.energy.e1, e2: e2s[i] };
            run_point(cfg, opts, point, channel)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = ExperimentOutput { grids, ..ExperimentOutput::default() };
    let mut per_alg: Vec<Vec<MetricsRecord>> = vec![Vec::new(); cfg.algorithms.len()];
    for r in results {
        for (slot, rec) in per_alg.iter_mut().zip(r.records) {
            slot.push(rec);
        }
        out.tables.extend(r.tables);
        out.weights.extend(r.weights);
        out.traces.extend(r.traces);
    }
    out.records = per_alg.into_iter().flatten().collect();
    Ok(out)
}

struct PointResult {
    records: Vec<MetricsRecord>,
    tables: Vec<PolicyTable>,
    weights: Vec<AdpWeights>,
    traces: Vec<Trace>,
}

/// BS used by the fixed-BS baseline: larger arrival rate, ties to BS1.
pub fn fixed_bs_choice(e1: f64, e2: f64) -> Bs {
    if e2 > e1 {
        Bs::Two
    } else {
        Bs::One
    }
}

fn run_point(cfg: &ExperimentConfig, opts: &RunOptions, point: Point, channel: &ChannelGrid) -> Result<PointResult> {
    let Point { seed, e1, e2 } = point;
    let wrap = |algorithm: Algorithm| move |source| HarnessError::Solve { algorithm, seed, e2, source };
    let grid = StateGrid::new(
        channel.clone(),
        [e1, e2],
        cfg.channel.noise_variance,
        cfg.channel.frame_length,
        cfg.grid.battery_levels,
        cfg.grid.quanta_per_frame,
    )
    .map_err(wrap(Algorithm::Dp))?;
    let mut sim = SimConfig::new(cfg.n_frames, derive_seed(seed, SIM_STREAM));
    sim.keep_user_rates = opts.user_rates;
    sim.keep_trace = opts.trace;
    let delta = cfg.solver.delta_alpha;

    // the fractional-JT MDP is shared by dp and adp
    let mut equality: Option<Mdp> = None;
    let mut res = PointResult { records: Vec::new(), tables: Vec::new(), weights: Vec::new(), traces: Vec::new() };
    for &alg in &cfg.algorithms {
        let err = wrap(alg);
        let start = Instant::now();
        let summary = match alg {
            Algorithm::Dp | Algorithm::FixedBs => {
                let objective = match alg {
                    Algorithm::Dp => StageObjective::Equality,
                    _ => StageObjective::FixedBs(fixed_bs_choice(e1, e2)),
                };
                let built;
                let mdp = if alg == Algorithm::Dp {
                    if equality.is_none() {
                        equality = Some(Mdp::build(grid.clone(), objective, delta).map_err(err)?);
                    }
                    equality.as_ref().unwrap()
                } else {
                    built = Mdp::build(grid.clone(), objective, delta).map_err(err)?;
                    &built
                };
                let rvi = relative_value_iteration(mdp, &cfg.rvi_params()).map_err(err)?;
                if opts.tables {
                    res.tables.push(policy_table(mdp, &rvi.policy, &rvi.utility.h, rvi.utility.lambda, point, alg));
                }
                evaluate_policy_mc(&grid, &TablePolicy::new(mdp, &rvi.policy).map_err(err)?, &sim).map_err(err)?
            }
            Algorithm::Adp => {
                if equality.is_none() {
                    equality = Some(Mdp::build(grid.clone(), StageObjective::Equality, delta).map_err(err)?);
                }
                let mdp = equality.as_ref().unwrap();
                let adp = approximate_policy_iteration(mdp, &cfg.adp_params(derive_seed(seed, ADP_STREAM))).map_err(err)?;
                if opts.weights {
                    res.weights.push(AdpWeights { point, lambda_best: adp.lambda_best, weights: adp.weights.clone() });
                }
                evaluate_policy_mc(&grid, &TablePolicy::new(mdp, &adp.policy).map_err(err)?, &sim).map_err(err)?
            }
            Algorithm::Greedy => evaluate_policy_mc(&grid, &Baseline::new(BaselineKind::Greedy, delta), &sim).map_err(err)?,
            Algorithm::Conventional => {
                evaluate_policy_mc(&grid, &Baseline::new(BaselineKind::ConventionalZfJt, delta), &sim).map_err(err)?
            }
        };
        let wall_time = if opts.timings { start.elapsed().as_secs_f64() } else { 0.0 };
        if opts.trace {
            res.traces.push(Trace { point, algorithm: alg, rows: summary.trace });
        }
        res.records.push(MetricsRecord {
            algorithm: alg.tag().to_string(),
            e1,
            e2,
            avg_sum_rate: summary.avg_sum_rate,
            avg_alpha: summary.avg_alpha,
            seed,
            n_frames: summary.n_frames,
            wall_time,
            user_rate_samples: summary.user_rates,
        });
    }
    Ok(res)
}

fn policy_table(mdp: &Mdp, policy: &Policy, h: &[f64], lambda: f64, point: Point, algorithm: Algorithm) -> PolicyTable {
    let g = mdp.grid();
    let rows = (0..mdp.n_states())
        .map(|s| {
            let (levels, channel) = g.decompose(s);
            let action = mdp.action(s, policy.action[s]);
            TableRow { levels, channel, h: h[s], budget: action.budgets }
        })
        .collect();
    PolicyTable { point, algorithm, lambda, rows }
}
