//! Discretized battery/channel MDP with relative value iteration and exact
//! policy iteration.
//!
//! Battery `k` lives on the ladder `{0, D_k, 2 D_k, ...}` with
//! `D_k = T E_k / q`, where `q` is the number of battery quanta harvested
//! per frame. An action picks the next battery level of each BS; its budget
//! is whatever the frame must spend to land there,
//! `A_k = (B_k + T E_k - t_k D_k) / T`. Since the equality variant spends
//! budgets exactly, batteries stay on the ladder without rounding.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelGrid;
use crate::error::{domain, Error, Result};
use crate::perframe::{
    per_stage_utility, per_stage_utility_for_bs, per_stage_utility_inequality, PerFrameInput, PerFrameSolution,
};
use crate::zf::RowPowers;
use crate::Bs;

/// Battery levels and channel index; the MDP state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemState {
    /// J.
    pub battery: [f64; 2],
    pub channel_idx: usize,
}

/// Per-frame average-power budgets, W.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub budgets: [f64; 2],
}

/// Which per-stage maximizer defines the utility.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageObjective {
    /// JT constraints hold with equality.
    Equality,
    /// JT constraints are caps; unspent energy stays in the battery.
    Inequality,
    /// Equality variant with the single-BS subframe pinned to one BS.
    FixedBs(Bs),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateGrid {
    channel: ChannelGrid,
    inputs: Vec<PerFrameInput>,
    arrival: [f64; 2],
    noise: f64,
    frame_length: f64,
    levels: [usize; 2],
    step: [f64; 2],
    quanta: usize,
}

impl StateGrid {
    /// `battery_levels` per BS (including 0); a BS without arrivals gets a
    /// single level.
    pub fn new(
        channel: ChannelGrid,
        arrival: [f64; 2],
        noise: f64,
        frame_length: f64,
        battery_levels: usize,
        quanta_per_frame: usize,
    ) -> Result<Self> {
        if battery_levels < 1 || quanta_per_frame < 1 {
            return Err(domain("battery levels and quanta per frame must be at least 1"));
        }
        if !(noise > 0.0) || !(frame_length > 0.0) {
            return Err(domain("noise and frame length must be positive"));
        }
        if arrival.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(domain("energy arrival rates must be non-negative"));
        }
        let mut levels = [1; 2];
        let mut step = [0.0; 2];
        for k in 0..2 {
            if arrival[k] > 0.0 {
                levels[k] = battery_levels;
                step[k] = frame_length * arrival[k] / quanta_per_frame as f64;
            }
        }
        let inputs = channel
            .states()
            .iter()
            .map(|h| PerFrameInput::new([0.0; 2], arrival, [0.0; 2], *h, noise, frame_length))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channel,
            inputs,
            arrival,
            noise,
            frame_length,
            levels,
            step,
            quanta: quanta_per_frame,
        })
    }

    pub fn channel(&self) -> &ChannelGrid {
        &self.channel
    }

    pub fn arrival(&self) -> [f64; 2] {
        self.arrival
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn frame_length(&self) -> f64 {
        self.frame_length
    }

    pub fn levels(&self, k: usize) -> usize {
        self.levels[k]
    }

    pub fn step(&self, k: usize) -> f64 {
        self.step[k]
    }

    /// Battery cap `B_max`, J.
    pub fn cap(&self) -> [f64; 2] {
        [self.battery_value(0, self.levels[0] - 1), self.battery_value(1, self.levels[1] - 1)]
    }

    pub fn battery_value(&self, k: usize, level: usize) -> f64 {
        level as f64 * self.step[k]
    }

    pub fn battery_levels(&self, k: usize) -> Vec<f64> {
        (0..self.levels[k]).map(|i| self.battery_value(k, i)).collect()
    }

    pub fn n_channels(&self) -> usize {
        self.channel.len()
    }

    pub fn n_battery_pairs(&self) -> usize {
        self.levels[0] * self.levels[1]
    }

    pub fn n_states(&self) -> usize {
        self.n_battery_pairs() * self.n_channels()
    }

    pub fn index(&self, levels: [usize; 2], channel_idx: usize) -> usize {
        (levels[0] * self.levels[1] + levels[1]) * self.n_channels() + channel_idx
    }

    /// `(battery levels, channel index)` of a state index.
    pub fn decompose(&self, s: usize) -> ([usize; 2], usize) {
        let nc = self.n_channels();
        let pair = s / nc;
        ([pair / self.levels[1], pair % self.levels[1]], s % nc)
    }

    pub fn system_state(&self, s: usize) -> SystemState {
        let (lv, j) = self.decompose(s);
        SystemState {
            battery: [self.battery_value(0, lv[0]), self.battery_value(1, lv[1])],
            channel_idx: j,
        }
    }

    /// Highest ladder level not above `b` (with rounding slack).
    pub fn project(&self, k: usize, b: f64) -> usize {
        if self.step[k] <= 0.0 {
            return 0;
        }
        let x = b / self.step[k];
        let lv = libm::floor(x + 1e-9 * (1.0 + x));
        (lv.max(0.0) as usize).min(self.levels[k] - 1)
    }

    /// Largest target level reachable from `level` (everything saved).
    pub fn max_target(&self, k: usize, level: usize) -> usize {
        if self.step[k] <= 0.0 {
            0
        } else {
            level + self.quanta
        }
    }

    /// Target-level pairs allowed in state `s`, BS 1 major.
    pub fn actions(&self, s: usize) -> impl Iterator<Item = [usize; 2]> + '_ {
        let (lv, _) = self.decompose(s);
        let (m1, m2) = (self.max_target(0, lv[0]), self.max_target(1, lv[1]));
        (0..=m1).flat_map(move |t1| (0..=m2).map(move |t2| [t1, t2]))
    }

    pub fn budget(&self, s: usize, targets: [usize; 2]) -> Action {
        let (lv, _) = self.decompose(s);
        let mut budgets = [0.0; 2];
        for k in 0..2 {
            let spare = (lv[k] + self.quanta) as f64 - targets[k] as f64;
            budgets[k] = if self.step[k] > 0.0 {
                (spare * self.step[k] / self.frame_length).max(0.0)
            } else {
                0.0
            };
        }
        Action { budgets }
    }

    /// Full-budget per-frame input for a battery state and channel index.
    pub fn input_at(&self, battery: [f64; 2], channel_idx: usize) -> PerFrameInput {
        let mut input = self.inputs[channel_idx].clone();
        input.battery = battery;
        input.with_full_budget()
    }

    pub fn per_frame_input(&self, s: usize, action: &Action) -> Result<PerFrameInput> {
        let st = self.system_state(s);
        self.input_at(st.battery, st.channel_idx).with_budget(action.budgets)
    }
}

/// Battery after one frame, clipped to `[0, cap]`.
pub fn battery_update(
    battery: [f64; 2],
    sol: &PerFrameSolution,
    row_powers: &RowPowers,
    arrival: [f64; 2],
    frame_length: f64,
    cap: [f64; 2],
) -> Result<[f64; 2]> {
    let used = sol.energy_use(row_powers);
    let mut out = [0.0; 2];
    for k in 0..2 {
        let b = battery[k] + frame_length * (arrival[k] - used[k]);
        let scale = battery[k] + frame_length * arrival[k];
        if b < -1e-9 * scale.max(1.0) {
            return Err(Error::ConstraintViolation {
                bs: k as u8 + 1,
                level: b,
            });
        }
        out[k] = b.clamp(0.0, cap[k]);
    }
    Ok(out)
}

/// The MDP with every per-stage problem solved up front.
#[derive(Clone, Debug)]
pub struct Mdp {
    grid: StateGrid,
    objective: StageObjective,
    start: Vec<usize>,
    targets: Vec<[usize; 2]>,
    solutions: Vec<PerFrameSolution>,
    next_pair: Vec<usize>,
}

impl Mdp {
    pub fn build(grid: StateGrid, objective: StageObjective, delta_alpha: f64) -> Result<Self> {
        if !(delta_alpha > 0.0) {
            return Err(domain("delta_alpha must be positive"));
        }
        let ns = grid.n_states();
        let mut start = Vec::with_capacity(ns + 1);
        let mut targets = Vec::new();
        let mut solutions = Vec::new();
        let mut next_pair = Vec::new();
        let cap = grid.cap();
        for s in 0..ns {
            start.push(targets.len());
            let st = grid.system_state(s);
            for t in grid.actions(s) {
                let input = grid.per_frame_input(s, &grid.budget(s, t))?;
                let sol = match objective {
                    StageObjective::Equality => per_stage_utility(&input, delta_alpha),
                    StageObjective::Inequality => per_stage_utility_inequality(&input, delta_alpha),
                    StageObjective::FixedBs(k) => {
                        per_stage_utility_for_bs(&input, k, delta_alpha).unwrap_or_else(PerFrameSolution::zero)
                    }
                };
                let b = battery_update(st.battery, &sol, &input.row_powers, grid.arrival, grid.frame_length, cap)?;
                let lv = [grid.project(0, b[0]), grid.project(1, b[1])];
                targets.push(t);
                solutions.push(sol);
                next_pair.push(lv[0] * grid.levels[1] + lv[1]);
            }
        }
        start.push(targets.len());
        Ok(Self {
            grid,
            objective,
            start,
            targets,
            solutions,
            next_pair,
        })
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn objective(&self) -> StageObjective {
        self.objective
    }

    pub fn n_states(&self) -> usize {
        self.grid.n_states()
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.start[s + 1] - self.start[s]
    }

    pub fn action_targets(&self, s: usize, a: usize) -> [usize; 2] {
        self.targets[self.start[s] + a]
    }

    pub fn action_index(&self, s: usize, targets: [usize; 2]) -> Option<usize> {
        self.targets[self.start[s]..self.start[s + 1]].iter().position(|&t| t == targets)
    }

    pub fn solution(&self, s: usize, a: usize) -> &PerFrameSolution {
        &self.solutions[self.start[s] + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.solutions[self.start[s] + a].sum_rate
    }

    /// Battery-pair index after taking action `a` in `s`.
    pub fn next_pair(&self, s: usize, a: usize) -> usize {
        self.next_pair[self.start[s] + a]
    }

    pub fn action(&self, s: usize, a: usize) -> Action {
        self.grid.budget(s, self.action_targets(s, a))
    }

    /// `sum_j P(j) v(pair, j)` for every battery pair.
    pub fn expected_by_pair(&self, v: &[f64]) -> Vec<f64> {
        let probs = self.grid.channel.probs();
        let nc = probs.len();
        (0..self.grid.n_battery_pairs())
            .map(|pair| probs.iter().enumerate().map(|(j, p)| p * v[pair * nc + j]).sum())
            .collect()
    }

    /// Index of the first maximizer of `g + weight * cont`.
    fn best_action(&self, s: usize, cont: &[f64], weight: f64) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..self.n_actions(s) {
            let q = self.reward(s, a) + weight * cont[self.next_pair(s, a)];
            if q > best.1 {
                best = (a, q);
            }
        }
        best
    }

    /// Policy that maximizes `g + E[v(s')]` for a given continuation value.
    pub fn greedy_policy(&self, v: &[f64]) -> Policy {
        let cont = self.expected_by_pair(v);
        Policy {
            action: (0..self.n_states()).map(|s| self.best_action(s, &cont, 1.0).0).collect(),
        }
    }

    /// Policy spending everything each frame.
    pub fn spend_all_policy(&self) -> Policy {
        Policy {
            action: (0..self.n_states())
                .map(|s| self.action_index(s, [0, 0]).unwrap_or(0))
                .collect(),
        }
    }

    /// Default reference state `(0, 0, H0)` with `H0` the most probable channel.
    pub fn default_reference(&self) -> usize {
        self.grid.index([0, 0], self.grid.channel.most_probable())
    }
}

/// Action index per state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub action: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelativeUtility {
    /// Relative utility per state, zero at the reference state.
    pub h: Vec<f64>,
    /// Average sum-rate.
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RviParams {
    pub tau: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Reference state index; `None` picks `(0, 0, most probable channel)`.
    pub reference: Option<usize>,
}

impl Default for RviParams {
    fn default() -> Self {
        Self {
            tau: 0.9,
            tol: 1e-5,
            max_iter: 200_000,
            reference: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RviResult {
    pub utility: RelativeUtility,
    pub policy: Policy,
    pub iterations: usize,
}

/// Relative value iteration with damping `tau`.
///
/// The iterate `h` converges to a fixed point of the damped recursion;
/// the returned utility is `tau * h`, which satisfies the undamped Bellman
/// equation `lambda + h(s) = max_a [g(s, a) + E h(s')]` with `h(s0) = 0`.
pub fn relative_value_iteration(mdp: &Mdp, params: &RviParams) -> Result<RviResult> {
    let tau = params.tau;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(domain("tau must lie in (0, 1)"));
    }
    if !(params.tol > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    let ns = mdp.n_states();
    let s0 = params.reference.unwrap_or_else(|| mdp.default_reference());
    if s0 >= ns {
        return Err(domain("reference state out of range"));
    }
    let mut h = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    let mut lambda = 0.0;
    for it in 1..=params.max_iter {
        let cont = mdp.expected_by_pair(&h);
        for (s, out) in next.iter_mut().enumerate() {
            *out = mdp.best_action(s, &cont, tau).1;
        }
        lambda = next[s0];
        residual = 0.0;
        for (hs, best) in h.iter_mut().zip(next.iter()) {
            let updated = (1.0 - tau) * *hs + best - lambda;
            residual = residual.max((updated - *hs).abs());
            *hs = updated;
        }
        if residual < params.tol {
            let scaled: Vec<f64> = h.iter().map(|v| tau * v).collect();
            let policy = mdp.greedy_policy(&scaled);
            return Ok(RviResult {
                utility: RelativeUtility { h: scaled, lambda },
                policy,
                iterations: it,
            });
        }
    }
    let _ = lambda;
    Err(Error::NotConverged {
        iterations: params.max_iter,
        residual,
    })
}

/// Successor states of `s` under action `a` (channel draws with positive
/// probability).
fn successors(mdp: &Mdp, s: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
    let probs = mdp.grid.channel.probs();
    let nc = probs.len();
    let pair = mdp.next_pair(s, a);
    (0..nc).filter(move |&j| probs[j] > 0.0).map(move |j| pair * nc + j)
}

/// Closed communicating classes of the chain induced by `policy`.
pub fn recurrent_classes(mdp: &Mdp, policy: &Policy) -> Vec<Vec<usize>> {
    let ns = mdp.n_states();
    // reachability sets by BFS from every state; sizes here are small
    let mut reach = vec![vec![false; ns]; ns];
    let mut queue = Vec::new();
    for (s, row) in reach.iter_mut().enumerate() {
        row[s] = true;
        queue.clear();
        queue.push(s);
        while let Some(u) = queue.pop() {
            for v in successors(mdp, u, policy.action[u]) {
                if !row[v] {
                    row[v] = true;
                    queue.push(v);
                }
            }
        }
    }
    let mut class_of = vec![usize::MAX; ns];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for s in 0..ns {
        if class_of[s] != usize::MAX {
            continue;
        }
        let recurrent = (0..ns).all(|t| !reach[s][t] || reach[t][s]);
        if !recurrent {
            continue;
        }
        let members: Vec<usize> = (0..ns).filter(|&t| reach[s][t]).collect();
        for &t in &members {
            class_of[t] = classes.len();
        }
        classes.push(members);
    }
    classes
}

/// Gain and bias of a stationary policy, possibly multichain.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyValue {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Evaluates a policy. Unichain policies solve
/// `lambda + h(s) = g(s, a(s)) + E h(s')` with `h(s0) = 0`; multichain ones
/// solve the gain/bias equations with one bias pinned per recurrent class.
pub fn evaluate_policy_value(mdp: &Mdp, policy: &Policy, reference: usize) -> Result<PolicyValue> {
    let ns = mdp.n_states();
    if policy.action.len() != ns || reference >= ns {
        return Err(domain("policy or reference does not match the MDP"));
    }
    if policy.action.iter().enumerate().any(|(s, &a)| a >= mdp.n_actions(s)) {
        return Err(domain("policy action out of range"));
    }
    let probs = mdp.grid.channel.probs();
    let nc = probs.len();
    let classes = recurrent_classes(mdp, policy);
    let fill_transition = |m: &mut DMatrix<f64>, row: usize, col0: usize, s: usize| {
        let pair = mdp.next_pair(s, policy.action[s]);
        for (j, p) in probs.iter().enumerate() {
            m[(row, col0 + pair * nc + j)] -= p;
        }
    };
    if classes.len() <= 1 {
        let mut m = DMatrix::<f64>::zeros(ns, ns);
        let mut rhs = DVector::<f64>::zeros(ns);
        for s in 0..ns {
            rhs[s] = mdp.reward(s, policy.action[s]);
            m[(s, s)] += 1.0;
            fill_transition(&mut m, s, 0, s);
        }
        // h(s0) is pinned to zero, so its column carries lambda instead
        for s in 0..ns {
            m[(s, reference)] = 1.0;
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular policy-evaluation system".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite policy evaluation".into()));
        }
        let lambda = sol[reference];
        let mut bias: Vec<f64> = sol.iter().copied().collect();
        bias[reference] = 0.0;
        return Ok(PolicyValue {
            gain: vec![lambda; ns],
            bias,
        });
    }
    // unknowns [gain; bias]
    let rows = 2 * ns + classes.len();
    let mut m = DMatrix::<f64>::zeros(rows, 2 * ns);
    let mut rhs = DVector::<f64>::zeros(rows);
    for s in 0..ns {
        m[(s, s)] += 1.0;
        fill_transition(&mut m, s, 0, s);
        let r = ns + s;
        m[(r, s)] = 1.0;
        m[(r, ns + s)] += 1.0;
        fill_transition(&mut m, r, ns, s);
        rhs[r] = mdp.reward(s, policy.action[s]);
    }
    for (c, class) in classes.iter().enumerate() {
        m[(2 * ns + c, ns + class[0])] = 1.0;
    }
    let sol = m
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Numeric(alloc::format!("multichain evaluation failed: {e}")))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite policy evaluation".into()));
    }
    Ok(PolicyValue {
        gain: sol.rows(0, ns).iter().copied().collect(),
        bias: sol.rows(ns, ns).iter().copied().collect(),
    })
}

/// Relative utility of a policy with a single average reward.
pub fn evaluate_policy_exact(mdp: &Mdp, policy: &Policy, reference: usize) -> Result<RelativeUtility> {
    let v = evaluate_policy_value(mdp, policy, reference)?;
    let lambda = v.gain[reference];
    if v.gain.iter().any(|g| (g - lambda).abs() > 1e-9 * (1.0 + lambda.abs())) {
        return Err(Error::Numeric("policy has state-dependent average reward".into()));
    }
    let shift = v.bias[reference];
    Ok(RelativeUtility {
        h: v.bias.iter().map(|b| b - shift).collect(),
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyIterationResult {
    pub utility: RelativeUtility,
    pub policy: Policy,
    /// Average reward from the reference state, one entry per evaluation.
    pub lambda_trace: Vec<f64>,
}

/// Exact policy iteration. Improvement first maximizes the expected gain of
/// the successor (only matters for multichain iterates), then
/// `g(s, a) + E h(s')`; the current action is kept on ties so the loop
/// terminates.
pub fn policy_iteration_exact(
    mdp: &Mdp,
    initial: &Policy,
    reference: Option<usize>,
    tol: f64,
    max_iter: usize,
) -> Result<PolicyIterationResult> {
    let s0 = reference.unwrap_or_else(|| mdp.default_reference());
    let mut policy = initial.clone();
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let value = evaluate_policy_value(mdp, &policy, s0)?;
        trace.push(value.gain[s0]);
        let eg = mdp.expected_by_pair(&value.gain);
        let eh = mdp.expected_by_pair(&value.bias);
        let gain_tol = |x: f64| tol * (1.0 + x.abs());
        let mut changed = false;
        let mut targets = vec![0.0; mdp.n_states()];
        for s in 0..mdp.n_states() {
            let cur = policy.action[s];
            let best_g = (0..mdp.n_actions(s))
                .map(|a| eg[mdp.next_pair(s, a)])
                .fold(f64::NEG_INFINITY, f64::max);
            targets[s] = best_g;
            if eg[mdp.next_pair(s, cur)] < best_g - gain_tol(best_g) {
                let a = (0..mdp.n_actions(s))
                    .filter(|&a| eg[mdp.next_pair(s, a)] >= best_g - gain_tol(best_g))
                    .max_by(|&x, &y| {
                        let qx = mdp.reward(s, x) + eh[mdp.next_pair(s, x)];
                        let qy = mdp.reward(s, y) + eh[mdp.next_pair(s, y)];
                        qx.total_cmp(&qy).then(y.cmp(&x))
                    })
                    .unwrap_or(cur);
                policy.action[s] = a;
                changed = true;
            }
        }
        if !changed {
            for s in 0..mdp.n_states() {
                let cur = policy.action[s];
                let q = |a: usize| mdp.reward(s, a) + eh[mdp.next_pair(s, a)];
                let q_cur = q(cur);
                let mut best = (cur, q_cur);
                for a in 0..mdp.n_actions(s) {
                    if eg[mdp.next_pair(s, a)] >= targets[s] - gain_tol(targets[s]) && q(a) > best.1 {
                        best = (a, q(a));
                    }
                }
                if best.1 > q_cur + tol * (1.0 + q_cur.abs()) {
                    policy.action[s] = best.0;
                    changed = true;
                }
            }
        }
        if !changed {
            let utility = evaluate_policy_exact(mdp, &policy, s0)?;
            return Ok(PolicyIterationResult {
                utility,
                policy,
                lambda_trace: trace,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelMatrix;

    fn one_channel_grid(levels: usize, arrival: [f64; 2]) -> StateGrid {
        let ch = ChannelGrid::new(vec![ChannelMatrix::from_real([[1.0, 0.3], [0.2, 0.8]])], vec![1.0]).unwrap();
        StateGrid::new(ch, arrival, 1.0, 1.0, levels, 1).unwrap()
    }

    #[test]
    fn state_index_round_trip() {
        let ch = ChannelGrid::new(
            vec![ChannelMatrix::identity(), ChannelMatrix::from_real([[1.0, 0.3], [0.2, 0.8]])],
            vec![0.5, 0.5],
        )
        .unwrap();
        let g = StateGrid::new(ch, [0.1, 0.4], 1.0, 1.0, 4, 1).unwrap();
        assert_eq!(g.n_states(), 32);
        for s in 0..g.n_states() {
            let (lv, j) = g.decompose(s);
            assert_eq!(g.index(lv, j), s);
        }
        assert_eq!(g.battery_levels(1), vec![0.0, 0.4, 0.8, 1.2000000000000002]);
    }

    #[test]
    fn full_spend_action_has_full_budget() {
        let g = one_channel_grid(4, [0.5, 1.0]);
        let s = g.index([2, 1], 0);
        let a = g.budget(s, [0, 0]);
        assert!((a.budgets[0] - 1.5).abs() < 1e-12 && (a.budgets[1] - 2.0).abs() < 1e-12);
        assert_eq!(g.actions(s).count(), 4 * 3);
    }

    #[test]
    fn zero_arrival_bs_has_one_level() {
        let g = one_channel_grid(5, [0.5, 0.0]);
        assert_eq!(g.levels(1), 1);
        assert_eq!(g.cap(), [2.0, 0.0]);
        let s = g.index([1, 0], 0);
        assert_eq!(g.actions(s).count(), 3);
    }

    #[test]
    fn battery_update_cases() {
        let rp = [[1.0, 0.0], [0.0, 1.0]];
        let sol = PerFrameSolution::zero();
        let b = battery_update([1.0, 2.0], &sol, &rp, [0.5, 0.5], 1.0, [1.2, 5.0]).unwrap();
        assert_eq!(b, [1.2, 2.5]);
        let spend = PerFrameSolution { p: [1.5, 2.5], ..PerFrameSolution::zero() };
        let b = battery_update([1.0, 2.0], &spend, &rp, [0.5, 0.5], 1.0, [9.0, 9.0]).unwrap();
        assert!(b[0].abs() < 1e-12 && b[1].abs() < 1e-12);
        let over = PerFrameSolution { p: [2.0, 0.0], ..PerFrameSolution::zero() };
        assert!(matches!(
            battery_update([1.0, 2.0], &over, &rp, [0.5, 0.5], 1.0, [9.0, 9.0]),
            Err(Error::ConstraintViolation { bs: 1, .. })
        ));
    }

    #[test]
    fn single_state_single_action() {
        let g = one_channel_grid(1, [0.0, 0.0]);
        let mdp = Mdp::build(g, StageObjective::Equality, 1e-3).unwrap();
        let r = relative_value_iteration(&mdp, &RviParams::default()).unwrap();
        assert_eq!(r.utility.lambda, mdp.reward(0, 0));
        assert_eq!(r.utility.h, vec![0.0]);
    }

    #[test]
    fn equality_spend_lands_on_ladder() {
        let g = one_channel_grid(4, [0.3, 0.7]);
        let mdp = Mdp::build(g, StageObjective::Equality, 1e-3).unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions(s) {
                let t = mdp.action_targets(s, a);
                let next = mdp.next_pair(s, a);
                let lv = [next / mdp.grid().levels(1), next % mdp.grid().levels(1)];
                if mdp.reward(s, a) > 0.0 {
                    assert_eq!(lv, [t[0].min(3), t[1].min(3)]);
                }
            }
        }
    }

    #[test]
    fn rvi_and_policy_iteration_agree() {
        let g = one_channel_grid(4, [0.3, 0.7]);
        let mdp = Mdp::build(g, StageObjective::Equality, 1e-3).unwrap();
        let params = RviParams { tol: 1e-9, ..RviParams::default() };
        let r = relative_value_iteration(&mdp, &params).unwrap();
        let pi = policy_iteration_exact(&mdp, &mdp.spend_all_policy(), None, 1e-12, 100).unwrap();
        assert!((r.utility.lambda - pi.utility.lambda).abs() < 1e-6);
        for w in pi.lambda_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }
}
