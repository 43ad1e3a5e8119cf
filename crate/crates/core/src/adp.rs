//! Simulation-based approximate policy iteration.
//!
//! The relative utility is approximated as `h(s) ~ phi(s)^T c`. A policy is
//! evaluated by LSPE(beta) along a simulated trajectory, then improved
//! greedily against the expected next-state approximation. Several
//! explorations restart from random policies and states; the best iterate
//! is chosen by Monte-Carlo evaluation on a common seed.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::channel::ChannelMatrix;
use crate::derive_seed;
use crate::dp::{Mdp, Policy};
use crate::error::{domain, Error, Result};
use crate::math;
use crate::simulate::{evaluate_policy_mc, SimConfig, TablePolicy};
use crate::zf::gram_eigenvalues;

/// Number of hand-crafted features.
pub const N_FEATURES: usize = 14;

/// Names of the hand-crafted features, in order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "energy_1",
    "energy_2",
    "gain_11",
    "gain_12",
    "gain_21",
    "gain_22",
    "eig_1",
    "eig_2",
    "energy_gain_11",
    "energy_gain_12",
    "energy_gain_21",
    "energy_gain_22",
    "energy_eig_1",
    "energy_eig_2",
];

/// The 14 hand-crafted features of a state: available energy, channel gains,
/// eigenvalues of `H H^H`, and their energy-weighted products, all through
/// `log2(1 + .)`. Gains are indexed `[user][bs]`.
pub fn features(
    battery: [f64; 2],
    arrival: [f64; 2],
    noise: f64,
    frame_length: f64,
    channel: &ChannelMatrix,
) -> [f64; N_FEATURES] {
    let energy = [
        battery[0] / frame_length + arrival[0],
        battery[1] / frame_length + arrival[1],
    ];
    let (r1, r2) = gram_eigenvalues(channel);
    let rho = [r1, r2];
    let mut f = [0.0; N_FEATURES];
    for k in 0..2 {
        f[k] = math::log2_1p(energy[k] / noise);
        f[6 + k] = math::log2_1p(rho[k]);
        f[12 + k] = math::log2_1p(energy[k] * rho[k] / noise);
    }
    for i in 0..2 {
        for k in 0..2 {
            let g = channel.gain(i, k);
            f[2 + 2 * i + k] = math::log2_1p(g);
            f[8 + 2 * i + k] = math::log2_1p(energy[k] * g / noise);
        }
    }
    f
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureSet {
    /// The 14 hand-crafted features.
    #[default]
    Standard,
    /// Standard features plus a constant 1.
    StandardWithBias,
    /// One indicator per grid state (exact representation).
    Indicator,
    /// Standard features followed by per-state indicators.
    StandardWithIndicator,
}

/// Feature rows for every MDP state, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: Vec<f64>,
}

impl FeatureTable {
    pub fn new(mdp: &Mdp, set: FeatureSet) -> Self {
        let g = mdp.grid();
        let ns = mdp.n_states();
        let (std, bias, ind) = match set {
            FeatureSet::Standard => (true, false, false),
            FeatureSet::StandardWithBias => (true, true, false),
            FeatureSet::Indicator => (false, false, true),
            FeatureSet::StandardWithIndicator => (true, false, true),
        };
        let dim = if std { N_FEATURES } else { 0 } + usize::from(bias) + if ind { ns } else { 0 };
        let mut rows = vec![0.0; dim * ns];
        for s in 0..ns {
            let row = &mut rows[s * dim..(s + 1) * dim];
            let mut at = 0;
            if std {
                let st = g.system_state(s);
                let f = features(
                    st.battery,
                    g.arrival(),
                    g.noise(),
                    g.frame_length(),
                    g.channel().state(st.channel_idx),
                );
                row[..N_FEATURES].copy_from_slice(&f);
                at = N_FEATURES;
            }
            if bias {
                row[at] = 1.0;
                at += 1;
            }
            if ind {
                row[at + s] = 1.0;
            }
        }
        Self { dim, rows }
    }

    /// Arbitrary rows, e.g. for a chain that is not an MDP grid.
    pub fn from_rows(dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows.len() % dim != 0 {
            return Err(domain("feature rows do not match the dimension"));
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s * self.dim..(s + 1) * self.dim]
    }

    /// `phi(s)^T c` for every state.
    pub fn values(&self, c: &[f64]) -> Vec<f64> {
        (0..self.n_states())
            .map(|s| self.row(s).iter().zip(c).map(|(f, w)| f * w).sum())
            .collect()
    }
}

/// A feature table centered and re-expressed in an orthonormal basis
/// (uniform weights over its states) with numerically null directions
/// dropped. Relative utilities are only defined up to a constant, and the
/// span plus constants is unchanged; centering removes the direction along
/// which the average-reward recursion has no fixed point. Weights map back
/// through `original = transform * whitened`, up to a constant offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Whitened {
    pub table: FeatureTable,
    /// `M x r`.
    pub transform: DMatrix<f64>,
}

impl Whitened {
    pub fn new(table: &FeatureTable) -> Self {
        let (ns, m) = (table.n_states(), table.dim());
        let mut phi = DMatrix::from_row_slice(ns, m, &table.rows);
        let mean = phi.row_mean();
        for mut row in phi.row_iter_mut() {
            row -= &mean;
        }
        let gram = phi.transpose() * &phi / ns as f64;
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..m).filter(|&j| eig.eigenvalues[j] > 1e-10 * top).collect();
        let mut transform = DMatrix::zeros(m, keep.len());
        for (col, &j) in keep.iter().enumerate() {
            let scale = 1.0 / math::sqrt(eig.eigenvalues[j]);
            for r in 0..m {
                transform[(r, col)] = eig.eigenvectors[(r, j)] * scale;
            }
        }
        let rows = (&phi * &transform).transpose();
        Self {
            table: FeatureTable {
                dim: keep.len().max(1),
                rows: if keep.is_empty() { vec![0.0; ns] } else { rows.as_slice().to_vec() },
            },
            transform,
        }
    }

    /// Weights in the original feature basis.
    pub fn original_weights(&self, c: &[f64]) -> Vec<f64> {
        if self.transform.ncols() == 0 {
            return vec![0.0; self.transform.nrows()];
        }
        (&self.transform * DVector::from_column_slice(c)).iter().copied().collect()
    }
}

/// Running LSPE(beta) statistics. All averages start from zero, so the
/// first sample sets them directly.
#[derive(Clone, Debug, PartialEq)]
pub struct LspeAccumulators {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub z_vec: DVector<f64>,
    /// Running average of the per-stage utility.
    pub lambda: f64,
    /// Samples absorbed so far.
    pub samples: u64,
}

impl LspeAccumulators {
    pub fn new(dim: usize) -> Self {
        Self {
            a_mat: DMatrix::zeros(dim, dim),
            b_mat: DMatrix::zeros(dim, dim),
            b_vec: DVector::zeros(dim),
            z_vec: DVector::zeros(dim),
            lambda: 0.0,
            samples: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b_vec.len()
    }
}

/// Absorbs the transition `s_i -> s_{i+1}` with utility `g_i` and returns
/// `c_{i+1} = c_i + B_i^{-1} (A_i c_i + b_i)`. `B_i` gets a ridge of
/// `1e-8 trace(B_i) / M` so early, rank-deficient steps stay defined.
pub fn lspe_step(
    acc: &mut LspeAccumulators,
    phi: &[f64],
    phi_next: &[f64],
    g: f64,
    beta: f64,
    c: &[f64],
) -> Result<Vec<f64>> {
    let m = acc.dim();
    if phi.len() != m || phi_next.len() != m || c.len() != m {
        return Err(domain("feature or weight dimension mismatch"));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(domain("beta must lie in [0, 1)"));
    }
    let i = acc.samples as f64;
    let (old, new) = (i / (i + 1.0), 1.0 / (i + 1.0));
    let phi_v = DVector::from_column_slice(phi);
    let diff = DVector::from_column_slice(phi_next) - &phi_v;
    acc.z_vec *= beta;
    acc.z_vec += &phi_v;
    acc.lambda = old * acc.lambda + new * g;
    acc.a_mat = &acc.a_mat * old + (&acc.z_vec * diff.transpose()) * new;
    acc.b_mat = &acc.b_mat * old + (&phi_v * phi_v.transpose()) * new;
    acc.b_vec = &acc.b_vec * old + &acc.z_vec * ((g - acc.lambda) * new);
    acc.samples += 1;

    let c_v = DVector::from_column_slice(c);
    let rhs = &acc.a_mat * &c_v + &acc.b_vec;
    let trace = acc.b_mat.trace();
    let ridge = if trace > 0.0 { 1e-8 * trace / m as f64 } else { 1e-12 };
    let mut reg = acc.b_mat.clone();
    for d in 0..m {
        reg[(d, d)] += ridge;
    }
    let step = match reg.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => reg
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("LSPE matrix is singular".into()))?,
    };
    Ok((c_v + step).iter().copied().collect())
}

/// A Markov chain driven by a fixed policy: reward of a state and a sampler
/// of the next state.
pub trait PolicyChain {
    fn reward(&self, s: usize) -> f64;
    fn next_state<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize;
}

/// An MDP under a tabulated policy.
#[derive(Clone, Debug)]
pub struct MdpChain<'a> {
    mdp: &'a Mdp,
    policy: &'a Policy,
    draw: rand_distr::weighted::WeightedIndex<f64>,
}

impl<'a> MdpChain<'a> {
    pub fn new(mdp: &'a Mdp, policy: &'a Policy) -> Result<Self> {
        if policy.action.len() != mdp.n_states() {
            return Err(domain("policy table does not match the MDP"));
        }
        Ok(Self {
            mdp,
            policy,
            draw: mdp.grid().channel().sampler()?,
        })
    }
}

impl PolicyChain for MdpChain<'_> {
    fn reward(&self, s: usize) -> f64 {
        self.mdp.reward(s, self.policy.action[s])
    }

    fn next_state<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let pair = self.mdp.next_pair(s, self.policy.action[s]);
        pair * self.mdp.grid().n_channels() + self.draw.sample(rng)
    }
}

// Weight updates start after this many samples per feature.
const LSPE_WARMUP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LspeParams {
    pub beta: f64,
    /// Trajectory length cap.
    pub n_samples: usize,
    /// Samples taken before the stopping test is consulted.
    pub min_samples: usize,
    /// Stop once `|c_{i+1} - c_i| < eps_c`.
    pub eps_c: f64,
}

impl Default for LspeParams {
    fn default() -> Self {
        Self {
            beta: 0.5,
            n_samples: 20_000,
            min_samples: 2_000,
            eps_c: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LspeResult {
    pub weights: Vec<f64>,
    /// Average utility along the trajectory.
    pub lambda: f64,
    pub samples: usize,
}

/// LSPE(beta) along one trajectory of `chain` started at `start`, with
/// weights starting from zero. Statistics accumulate from the first sample
/// but the weights are held until `3 M` samples have been seen; a handful of
/// samples gives a `B_i` whose inverse throws the weights far off.
pub fn evaluate_policy_lspe<C: PolicyChain>(
    chain: &C,
    table: &FeatureTable,
    start: usize,
    params: &LspeParams,
    seed: u64,
) -> Result<LspeResult> {
    if params.n_samples < table.dim().min(N_FEATURES) || params.n_samples == 0 {
        return Err(domain("LSPE needs at least as many samples as features"));
    }
    if !(params.eps_c > 0.0) {
        return Err(domain("eps_c must be positive"));
    }
    if start >= table.n_states() {
        return Err(domain("start state out of range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = LspeAccumulators::new(table.dim());
    let mut c = vec![0.0; table.dim()];
    let mut s = start;
    let mut samples = 0;
    while samples < params.n_samples {
        let next = chain.next_state(s, &mut rng);
        let stepped = lspe_step(&mut acc, table.row(s), table.row(next), chain.reward(s), params.beta, &c)?;
        samples += 1;
        let c_next = if samples >= LSPE_WARMUP * table.dim() { stepped } else { c.clone() };
        let norm = math::sqrt(c_next.iter().map(|v| v * v).sum());
        if !norm.is_finite() || norm > 1e6 {
            return Err(Error::Diverged { norm });
        }
        let change = math::sqrt(c_next.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum());
        c = c_next;
        s = next;
        if samples >= params.min_samples.max(LSPE_WARMUP * table.dim()) && change < params.eps_c {
            break;
        }
    }
    Ok(LspeResult {
        weights: c,
        lambda: acc.lambda,
        samples,
    })
}

/// Greedy policy against `phi(s')^T c`, with the channel expectation taken
/// exactly over the grid.
pub fn improve_policy_approx(mdp: &Mdp, table: &FeatureTable, c: &[f64]) -> Policy {
    mdp.greedy_policy(&table.values(c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdpParams {
    pub lspe: LspeParams,
    pub features: FeatureSet,
    /// Policy-improvement rounds per exploration (`N_I`).
    pub iterations: usize,
    /// Independent restarts (`N_E`).
    pub explorations: usize,
    /// Frames per Monte-Carlo evaluation of an iterate.
    pub eval_frames: usize,
    pub seed: u64,
}

impl Default for AdpParams {
    fn default() -> Self {
        Self {
            lspe: LspeParams::default(),
            features: FeatureSet::Standard,
            iterations: 10,
            explorations: 10,
            eval_frames: 10_000,
            seed: 0,
        }
    }
}

/// One evaluated iterate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdpIterate {
    pub exploration: usize,
    pub iteration: usize,
    /// LSPE trajectory average of the evaluated policy.
    pub lambda_lspe: f64,
    /// Monte-Carlo average of the improved policy.
    pub lambda_mc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdpResult {
    pub policy: Policy,
    /// Monte-Carlo average of `policy` on the evaluation seed.
    pub lambda_best: f64,
    /// Weights that produced `policy`, in the original feature basis.
    pub weights: Vec<f64>,
    pub history: Vec<AdpIterate>,
}

/// Random policy and start state for an exploration.
fn random_start<R: Rng + ?Sized>(mdp: &Mdp, rng: &mut R) -> (Policy, usize) {
    let action = (0..mdp.n_states()).map(|s| rng.random_range(0..mdp.n_actions(s))).collect();
    (Policy { action }, rng.random_range(0..mdp.n_states()))
}

/// Approximate policy iteration with `explorations` restarts of
/// `iterations` rounds each. Exploration `e` draws from the stream
/// `derive_seed(seed, e)`, so a run with fewer explorations is a prefix of
/// one with more. Every improved policy is scored by Monte-Carlo on the
/// same evaluation seed and the best one is returned.
pub fn approximate_policy_iteration(mdp: &Mdp, params: &AdpParams) -> Result<AdpResult> {
    if params.iterations == 0 || params.explorations == 0 || params.eval_frames == 0 {
        return Err(domain("iterations, explorations and eval_frames must be at least 1"));
    }
    let basis = Whitened::new(&FeatureTable::new(mdp, params.features));
    let table = &basis.table;
    let eval = SimConfig::new(params.eval_frames, derive_seed(params.seed, u64::MAX));
    let mut best: Option<(f64, Policy, Vec<f64>)> = None;
    let mut history = Vec::new();
    for e in 0..params.explorations {
        let stream = derive_seed(params.seed, e as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let (mut policy, _) = random_start(mdp, &mut rng);
        for n in 0..params.iterations {
            let start = rng.random_range(0..mdp.n_states());
            let chain = MdpChain::new(mdp, &policy)?;
            let lspe = evaluate_policy_lspe(&chain, table, start, &params.lspe, rng.random())?;
            let improved = improve_policy_approx(mdp, table, &lspe.weights);
            let score = evaluate_policy_mc(mdp.grid(), &TablePolicy::new(mdp, &improved)?, &eval)?.avg_sum_rate;
            history.push(AdpIterate {
                exploration: e,
                iteration: n,
                lambda_lspe: lspe.lambda,
                lambda_mc: score,
            });
            if best.as_ref().map_or(true, |b| score > b.0) {
                best = Some((score, improved.clone(), lspe.weights.clone()));
            }
            if improved == policy {
                break;
            }
            policy = improved;
        }
    }
    let (lambda_best, policy, weights) = best.expect("at least one iterate");
    Ok(AdpResult {
        policy,
        lambda_best,
        weights: basis.original_weights(&weights),
        history,
    })
}
