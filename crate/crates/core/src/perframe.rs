//! Per-frame sum-rate maximization for a fixed battery state and budget pair.
//!
//! Two variants are provided. The equality variant spends both budgets
//! exactly during the JT subframe and is solved in closed form for a fixed
//! `alpha`, then searched over `alpha` by bisection. The inequality variant
//! (budgets are caps) enumerates the KKT active sets and is used by the
//! greedy baseline and for cross-checking the equality variant.
//!
//! Rates are in bits/s/Hz and averaged over the frame. For the active BS `k`
//! and its partner `kb`, row powers are abbreviated as
//! `a = |w_k1|^2, b = |w_k2|^2, c = |w_kb1|^2, d = |w_kb2|^2`.

use crate::channel::ChannelMatrix;
use crate::error::{domain, Error, Result};
use crate::math;
use crate::zf::{row_powers, zf_weights, PrecodingMatrix, RowPowers};
use crate::{Bs, User};

/// Default step of the `alpha` monotonicity test.
pub const DEFAULT_DELTA_ALPHA: f64 = 1e-3;

// Width at which the final golden-section polish of `alpha` stops.
const ALPHA_POLISH_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PerFrameInput {
    /// Battery content at frame start, J.
    pub battery: [f64; 2],
    /// Energy arrival rates, W.
    pub arrival: [f64; 2],
    /// Average-power budgets of the frame, W.
    pub budget: [f64; 2],
    pub channel: ChannelMatrix,
    pub precoder: PrecodingMatrix,
    pub row_powers: RowPowers,
    pub noise: f64,
    pub frame_length: f64,
}

impl PerFrameInput {
    pub fn new(
        battery: [f64; 2],
        arrival: [f64; 2],
        budget: [f64; 2],
        channel: ChannelMatrix,
        noise: f64,
        frame_length: f64,
    ) -> Result<Self> {
        if !(noise > 0.0) {
            return Err(domain("noise variance must be positive"));
        }
        if !(frame_length > 0.0) {
            return Err(domain("frame length must be positive"));
        }
        let mut budget = budget;
        for k in 0..2 {
            if !(battery[k] >= 0.0) || !battery[k].is_finite() {
                return Err(domain("battery levels must be non-negative"));
            }
            if !(arrival[k] >= 0.0) || !arrival[k].is_finite() {
                return Err(domain("energy arrival rates must be non-negative"));
            }
            if !(budget[k] >= 0.0) {
                return Err(domain("budgets must be non-negative"));
            }
            let avail = battery[k] / frame_length + arrival[k];
            if budget[k] > avail * (1.0 + 1e-12) + 1e-300 {
                return Err(domain("budget exceeds available energy"));
            }
            budget[k] = budget[k].min(avail);
        }
        let precoder = zf_weights(&channel)?;
        let row_powers = row_powers(&precoder);
        let [[a, b], [c, d]] = row_powers;
        let det = a * d - b * c;
        if !(det.abs() > 1e-12 * (a * d + b * c)) {
            return Err(Error::DegenerateChannel);
        }
        Ok(Self {
            battery,
            arrival,
            budget,
            channel,
            precoder,
            row_powers,
            noise,
            frame_length,
        })
    }

    /// Input whose budgets spend everything available in the frame.
    pub fn full_budget(
        battery: [f64; 2],
        arrival: [f64; 2],
        channel: ChannelMatrix,
        noise: f64,
        frame_length: f64,
    ) -> Result<Self> {
        let budget = [
            battery[0] / frame_length + arrival[0],
            battery[1] / frame_length + arrival[1],
        ];
        Self::new(battery, arrival, budget, channel, noise, frame_length)
    }

    /// Same state with different budgets.
    pub fn with_budget(&self, budget: [f64; 2]) -> Result<Self> {
        let mut out = self.clone();
        for k in 0..2 {
            let avail = self.available(k);
            if !(budget[k] >= 0.0) || budget[k] > avail * (1.0 + 1e-12) + 1e-300 {
                return Err(domain("budget outside the action set"));
            }
            out.budget[k] = budget[k].min(avail);
        }
        Ok(out)
    }

    pub fn with_full_budget(&self) -> Self {
        let mut out = self.clone();
        out.budget = [self.available(0), self.available(1)];
        out
    }

    /// `B_k / T + E_k`.
    pub fn available(&self, k: usize) -> f64 {
        self.battery[k] / self.frame_length + self.arrival[k]
    }

    fn view(&self, k: Bs, user: User) -> View {
        let (ki, kb) = (k.index(), k.other().index());
        let rp = &self.row_powers;
        View {
            a: rp[ki][0],
            b: rp[ki][1],
            c: rp[kb][0],
            d: rp[kb][1],
            ak: self.budget[ki],
            akb: self.budget[kb],
            bk_rate: self.battery[ki] / self.frame_length,
            ek: self.arrival[ki],
            gain: self.channel.gain(user.index(), ki),
            noise: self.noise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerFrameSolution {
    /// BS active in the single-BS subframe.
    pub bs: Bs,
    /// User served in the single-BS subframe.
    pub user: User,
    pub alpha: f64,
    pub p_tilde: f64,
    pub p: [f64; 2],
    pub sum_rate: f64,
}

impl PerFrameSolution {
    pub fn zero() -> Self {
        Self {
            bs: Bs::One,
            user: User::One,
            alpha: 0.0,
            p_tilde: 0.0,
            p: [0.0, 0.0],
            sum_rate: 0.0,
        }
    }

    /// Frame-averaged rate of each user.
    pub fn user_rates(&self, input: &PerFrameInput) -> [f64; 2] {
        let jt = 1.0 - self.alpha;
        let mut r = [
            jt * math::log2_1p(self.p[0] / input.noise),
            jt * math::log2_1p(self.p[1] / input.noise),
        ];
        let g = input.channel.gain(self.user.index(), self.bs.index());
        r[self.user.index()] += self.alpha * math::log2_1p(self.p_tilde * g / input.noise);
        r
    }

    /// Average power drawn from each BS over the frame, W.
    pub fn energy_use(&self, row_powers: &RowPowers) -> [f64; 2] {
        let jt = 1.0 - self.alpha;
        let mut u = [0.0; 2];
        for (k, uk) in u.iter_mut().enumerate() {
            *uk = jt * (row_powers[k][0] * self.p[0] + row_powers[k][1] * self.p[1]);
        }
        if self.alpha > 0.0 {
            u[self.bs.index()] += self.alpha * self.p_tilde;
        }
        u
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibilityBounds {
    pub p_tilde_min: f64,
    pub p_tilde_max: f64,
    pub alpha_min: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl FeasibilityBounds {
    pub fn is_feasible(&self) -> bool {
        self.p_tilde_min <= self.p_tilde_max
    }
}

// Everything the solvers need about one (k, user) choice.
#[derive(Clone, Copy, Debug)]
struct View {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    ak: f64,
    akb: f64,
    bk_rate: f64,
    ek: f64,
    gain: f64,
    noise: f64,
}

impl View {
    fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    fn c1(&self) -> f64 {
        self.ak * self.d - self.akb * self.b
    }

    fn c2(&self) -> f64 {
        self.ak * self.c - self.akb * self.a
    }

    fn budget_tol(&self) -> f64 {
        1e-12 * (self.ak + self.akb)
    }

    /// Range of `x = alpha * p_tilde` keeping both JT powers non-negative on
    /// the equality manifold. It does not depend on `alpha`.
    fn manifold_interval(&self) -> Option<(f64, f64)> {
        let s = self.det().signum();
        let (c1, c2) = (self.c1(), self.c2());
        let tol = self.budget_tol() * (self.a + self.b + self.c + self.d);
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        // p1 >= 0  <=>  s (C1 - d x) >= 0
        if self.d > 0.0 {
            if s > 0.0 {
                hi = hi.min(c1 / self.d);
            } else {
                lo = lo.max(c1 / self.d);
            }
        } else if s * c1 < -tol {
            return None;
        }
        // p2 >= 0  <=>  s (c x - C2) >= 0
        if self.c > 0.0 {
            if s > 0.0 {
                lo = lo.max(c2 / self.c);
            } else {
                hi = hi.min(c2 / self.c);
            }
        } else if -s * c2 < -tol {
            return None;
        }
        if lo > hi + self.budget_tol() {
            return None;
        }
        Some((lo, hi.max(lo)))
    }

    fn alpha_min(&self) -> f64 {
        match self.manifold_interval() {
            None => f64::INFINITY,
            Some((lo, _)) if lo <= self.bk_rate * (1.0 + 1e-12) => 0.0,
            Some((lo, _)) if self.ek > 0.0 => (lo - self.bk_rate) / self.ek,
            Some(_) => f64::INFINITY,
        }
    }

    fn bounds(&self, alpha: f64) -> FeasibilityBounds {
        let c0 = (1.0 - alpha) * self.det();
        let (c1, c2) = (self.c1(), self.c2());
        let alpha_min = self.alpha_min();
        match self.manifold_interval() {
            None => FeasibilityBounds {
                p_tilde_min: f64::INFINITY,
                p_tilde_max: f64::NEG_INFINITY,
                alpha_min,
                c0,
                c1,
                c2,
            },
            Some((lo, hi)) => {
                let cap = self.bk_rate + alpha * self.ek;
                let mut upper = hi.min(cap);
                if lo > upper && lo <= upper * (1.0 + 1e-12) + self.budget_tol() {
                    upper = lo;
                }
                FeasibilityBounds {
                    p_tilde_min: lo / alpha,
                    p_tilde_max: upper / alpha,
                    alpha_min,
                    c0,
                    c1,
                    c2,
                }
            }
        }
    }

    /// JT powers on the equality manifold for a given `p_tilde`.
    fn manifold_powers(&self, alpha: f64, c0: f64, pt: f64) -> [f64; 2] {
        [
            (self.c1() - alpha * self.d * pt) / c0,
            (alpha * self.c * pt - self.c2()) / c0,
        ]
    }

    // d/dp_tilde of the natural-log objective, divided by alpha.
    fn slope(&self, alpha: f64, c0: f64, pt: f64) -> f64 {
        let s2 = self.noise;
        let d1 = s2 + self.gain * pt;
        let d2 = s2 * c0 + self.c1() - alpha * self.d * pt;
        let d3 = s2 * c0 - self.c2() + alpha * self.c * pt;
        self.gain / d1 - (1.0 - alpha) * self.d / d2 + (1.0 - alpha) * self.c / d3
    }

    // Derivative of `slope`; strictly negative on the domain.
    fn curvature(&self, alpha: f64, c0: f64, pt: f64) -> f64 {
        let s2 = self.noise;
        let d1 = s2 + self.gain * pt;
        let d2 = s2 * c0 + self.c1() - alpha * self.d * pt;
        let d3 = s2 * c0 - self.c2() + alpha * self.c * pt;
        -(self.gain * self.gain) / (d1 * d1)
            - (1.0 - alpha) * alpha * self.d * self.d / (d2 * d2)
            - (1.0 - alpha) * alpha * self.c * self.c / (d3 * d3)
    }

    fn in_domain(&self, alpha: f64, c0: f64, pt: f64) -> bool {
        let p = self.manifold_powers(alpha, c0, pt);
        self.noise + self.gain * pt > 0.0 && p[0] > -self.noise && p[1] > -self.noise
    }

    /// Root of the first-order condition after clearing denominators, chosen
    /// inside the domain where the objective is concave.
    fn quadratic_root(&self, alpha: f64, c0: f64) -> Option<f64> {
        let s2 = self.noise;
        let (u1, v1) = (s2, self.gain);
        let (u2, v2) = (s2 * c0 + self.c1(), -alpha * self.d);
        let (u3, v3) = (s2 * c0 - self.c2(), alpha * self.c);
        let w = 1.0 - alpha;
        // g D2 D3 - w d D1 D3 + w c D1 D2
        let prod = |ua: f64, va: f64, ub: f64, vb: f64| [ua * ub, ua * vb + ub * va, va * vb];
        let t1 = prod(u2, v2, u3, v3);
        let t2 = prod(u1, v1, u3, v3);
        let t3 = prod(u1, v1, u2, v2);
        let mut q = [0.0; 3];
        for n in 0..3 {
            q[n] = self.gain * t1[n] - w * self.d * t2[n] + w * self.c * t3[n];
        }
        let [q0, q1, q2] = q;
        let scale = q0.abs().max(q1.abs()).max(q2.abs());
        if !(scale > 0.0) {
            return None;
        }
        let mut roots = [f64::NAN; 2];
        if q2.abs() <= 1e-14 * scale {
            if q1 != 0.0 {
                roots[0] = -q0 / q1;
            }
        } else {
            let disc = q1 * q1 - 4.0 * q2 * q0;
            if disc < 0.0 {
                return None;
            }
            let sq = math::sqrt(disc);
            let t = -0.5 * (q1 + q1.signum() * sq);
            if t != 0.0 {
                roots[0] = t / q2;
                roots[1] = q0 / t;
            } else {
                roots[0] = 0.0;
            }
        }
        roots
            .into_iter()
            .filter(|r| r.is_finite() && self.in_domain(alpha, c0, *r))
            .min_by(|x, y| self.slope(alpha, c0, *x).abs().total_cmp(&self.slope(alpha, c0, *y).abs()))
    }

    fn stationary(&self, alpha: f64, fb: &FeasibilityBounds) -> f64 {
        let (lo, hi) = (fb.p_tilde_min, fb.p_tilde_max);
        if hi <= lo {
            return lo;
        }
        let c0 = fb.c0;
        let candidate = match self.quadratic_root(alpha, c0) {
            Some(r) => r.clamp(lo, hi),
            None => {
                // no usable root: the slope keeps one sign on the interval
                if self.slope(alpha, c0, lo) <= 0.0 {
                    lo
                } else {
                    hi
                }
            }
        };
        if candidate <= lo || candidate >= hi {
            return candidate;
        }
        self.polish(alpha, c0, lo, hi, candidate)
    }

    // Safeguarded Newton on the slope inside [lo, hi].
    fn polish(&self, alpha: f64, c0: f64, lo: f64, hi: f64, start: f64) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        let mut x = start;
        for _ in 0..50 {
            let s = self.slope(alpha, c0, x);
            if s == 0.0 {
                break;
            }
            if s > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let step = s / self.curvature(alpha, c0, x);
            let mut next = x - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
                x = next;
                break;
            }
            x = next;
        }
        x
    }

    fn objective(&self, alpha: f64, pt: f64, p: [f64; 2]) -> f64 {
        let s2 = self.noise;
        alpha * math::log2_1p(pt * self.gain / s2)
            + (1.0 - alpha) * (math::log2_1p(p[0] / s2) + math::log2_1p(p[1] / s2))
    }

    /// Best point of the equality manifold at fixed `alpha`.
    fn equality(&self, alpha: f64) -> Option<(f64, [f64; 2], f64)> {
        if alpha <= 0.0 {
            let det = self.det();
            let p = [self.c1() / det, -self.c2() / det];
            let tol = 1e-12 * (self.ak + self.akb) / (self.a + self.b + self.c + self.d);
            if p[0] < -tol || p[1] < -tol {
                return None;
            }
            let p = [p[0].max(0.0), p[1].max(0.0)];
            return Some((0.0, p, self.objective(0.0, 0.0, p)));
        }
        if alpha >= 1.0 {
            if self.akb > self.budget_tol() {
                return None;
            }
            let pt = self.ak;
            return Some((pt, [0.0, 0.0], self.objective(1.0, pt, [0.0, 0.0])));
        }
        let fb = self.bounds(alpha);
        if !fb.is_feasible() {
            return None;
        }
        let pt = self.stationary(alpha, &fb);
        let p = self.manifold_powers(alpha, fb.c0, pt);
        let p = [p[0].max(0.0), p[1].max(0.0)];
        Some((pt, p, self.objective(alpha, pt, p)))
    }
}

/// User with the larger single-BS rate from BS `k` at power `E_k`.
pub fn select_user(k: Bs, arrival_k: f64, channel: &ChannelMatrix, noise: f64) -> User {
    let rate = |i: usize| math::log2_1p(arrival_k * channel.gain(i, k.index()) / noise);
    if rate(1) > rate(0) {
        User::Two
    } else {
        User::One
    }
}

pub fn feasibility_bounds(input: &PerFrameInput, k: Bs, alpha: f64) -> Result<FeasibilityBounds> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain("alpha must lie strictly between 0 and 1"));
    }
    Ok(input.view(k, User::One).bounds(alpha))
}

/// Optimal `p_tilde` on the equality manifold for fixed `(k, alpha)`.
pub fn stationary_ptilde(input: &PerFrameInput, k: Bs, user: User, alpha: f64, fb: &FeasibilityBounds) -> f64 {
    input.view(k, user).stationary(alpha, fb)
}

/// Equality-constrained power allocation for fixed `(k, alpha)`; `None` when
/// the equality manifold has no feasible point.
pub fn power_allocation_equality(
    input: &PerFrameInput,
    k: Bs,
    user: User,
    alpha: f64,
) -> Result<Option<PerFrameSolution>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(domain("alpha must lie in [0, 1]"));
    }
    Ok(equality_solution(input, k, user, alpha))
}

fn equality_solution(input: &PerFrameInput, k: Bs, user: User, alpha: f64) -> Option<PerFrameSolution> {
    let (p_tilde, p, sum_rate) = input.view(k, user).equality(alpha)?;
    Some(PerFrameSolution {
        bs: k,
        user,
        alpha,
        p_tilde,
        p,
        sum_rate,
    })
}

pub fn subframe_objective(
    input: &PerFrameInput,
    k: Bs,
    user: User,
    alpha: f64,
    p_tilde: f64,
    p1: f64,
    p2: f64,
) -> f64 {
    input.view(k, user).objective(alpha, p_tilde, [p1, p2])
}

/// Outcome of the bracketing search over `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bisection {
    pub alpha: f64,
    pub value: f64,
    pub iterations: usize,
    /// Final bracket.
    pub lo: f64,
    pub hi: f64,
}

/// Bisection for the maximum of a concave `f` on `[lo, hi]`, testing the
/// midpoint against its `delta` neighbours. Infeasible points should map to
/// negative infinity. Points outside `[lo, hi]` are never evaluated.
pub fn bisect_concave<F: FnMut(f64) -> f64>(lo: f64, hi: f64, delta: f64, mut f: F) -> Bisection {
    let (mut lo, mut hi) = (lo, hi);
    let (lo0, hi0) = (lo, hi);
    let max_iter = if hi > lo && delta > 0.0 {
        math::ceil(math::log2((hi - lo) / delta)).max(0.0) as usize + 2
    } else {
        1
    };
    let mut eval = |x: f64| {
        if x < lo0 || x > hi0 {
            f64::NEG_INFINITY
        } else {
            f(x)
        }
    };
    let mut mid = 0.5 * (lo + hi);
    let mut value = f64::NEG_INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        value = eval(mid);
        let left = eval(mid - delta);
        let right = eval(mid + delta);
        if value >= left && value >= right {
            break;
        }
        if left <= value && value <= right {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Bisection {
        alpha: mid,
        value,
        iterations,
        lo,
        hi,
    }
}

/// Bisection for the equality variant over `[alpha_min, 1]`.
pub fn bisect_alpha(input: &PerFrameInput, k: Bs, user: User, delta_alpha: f64) -> Result<Option<(f64, f64)>> {
    if !(delta_alpha > 0.0) {
        return Err(domain("delta_alpha must be positive"));
    }
    let view = input.view(k, user);
    let amin = view.alpha_min();
    if !(amin <= 1.0) {
        return Ok(None);
    }
    let b = bisect_concave(amin, 1.0, delta_alpha, |a| value_or_floor(view.equality(a)));
    Ok(b.value.is_finite().then_some((b.alpha, b.value)))
}

fn value_or_floor(sol: Option<(f64, [f64; 2], f64)>) -> f64 {
    sol.map_or(f64::NEG_INFINITY, |s| s.2)
}

/// Golden-section maximization of a concave `f` on `(lo, hi)`.
fn golden<F: FnMut(f64) -> f64>(lo: f64, hi: f64, mut f: F) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (lo, hi);
    if !(hi > lo) {
        return;
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..80 {
        if hi - lo <= ALPHA_POLISH_TOL {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
}

// Bracket holding the maximum once the bisection has stopped: the `delta`
// neighbourhood after a successful local-max test, else the last bracket.
fn final_bracket<F: FnMut(f64) -> f64>(b: &Bisection, d: f64, lo: f64, f: &mut F) -> (f64, f64) {
    if b.value >= f(b.alpha - d).max(f(b.alpha + d)) {
        ((b.alpha - d).max(lo), (b.alpha + d).min(1.0))
    } else {
        (b.lo, b.hi)
    }
}

#[derive(Default)]
struct Best(Option<PerFrameSolution>);

impl Best {
    fn offer(&mut self, s: PerFrameSolution) -> f64 {
        if self.0.map_or(true, |b| s.sum_rate > b.sum_rate) {
            self.0 = Some(s);
        }
        s.sum_rate
    }
}

/// Equality-variant utility with the single-BS subframe pinned to BS `k`.
/// Follows the boundary checks before bisection, then polishes `alpha`
/// inside the final bracket; the best point evaluated is returned.
pub fn per_stage_utility_for_bs(input: &PerFrameInput, k: Bs, delta_alpha: f64) -> Option<PerFrameSolution> {
    let user = select_user(k, input.arrival[k.index()], &input.channel, input.noise);
    let view = input.view(k, user);
    let amin = view.alpha_min();
    if !(amin <= 1.0) {
        return None;
    }
    let mut best = Best::default();
    let mut f = |a: f64| -> f64 {
        if !(amin..=1.0).contains(&a) {
            return f64::NEG_INFINITY;
        }
        match equality_solution(input, k, user, a) {
            Some(s) => best.offer(s),
            None => f64::NEG_INFINITY,
        }
    };
    let d = delta_alpha;
    let at_min = f(amin);
    let one_allowed = view.akb <= view.budget_tol();
    let (lo, hi) = if at_min > f64::NEG_INFINITY && at_min > f((amin + d).min(1.0)) {
        (amin, (amin + d).min(1.0))
    } else if one_allowed && f(1.0) > f((1.0 - d).max(amin)) {
        ((1.0 - d).max(amin), 1.0)
    } else {
        let b = bisect_concave(amin, 1.0, d, &mut f);
        final_bracket(&b, d, amin, &mut f)
    };
    golden(lo, hi, &mut f);
    best.0
}

/// Equality-variant per-stage utility, maximized over the active BS.
pub fn per_stage_utility(input: &PerFrameInput, delta_alpha: f64) -> PerFrameSolution {
    best_over_bs(|k| per_stage_utility_for_bs(input, k, delta_alpha))
}

fn best_over_bs<F: FnMut(Bs) -> Option<PerFrameSolution>>(mut solve: F) -> PerFrameSolution {
    let mut best: Option<PerFrameSolution> = None;
    for k in Bs::ALL {
        if let Some(s) = solve(k) {
            if best.map_or(true, |b| s.sum_rate > b.sum_rate) {
                best = Some(s);
            }
        }
    }
    best.unwrap_or_else(PerFrameSolution::zero)
}

// Sum of `slope * min(cap, [level - threshold]^+)` terms, solved for the
// level at which it reaches `target`. The function is piecewise linear and
// non-decreasing, so the segment is bracketed by bisection over breakpoints
// and then solved exactly.
#[derive(Clone, Copy)]
struct Fill {
    slope: f64,
    threshold: f64,
    cap: f64,
}

fn fill_total(terms: &[Fill], level: f64) -> f64 {
    terms
        .iter()
        .map(|t| t.slope * (level - t.threshold).clamp(0.0, t.cap))
        .sum()
}

fn water_level(terms: &[Fill], target: f64) -> Option<f64> {
    let mut knots = [0.0_f64; 8];
    let mut n = 0;
    for t in terms {
        knots[n] = t.threshold;
        n += 1;
        if t.cap.is_finite() {
            knots[n] = t.threshold + t.cap;
            n += 1;
        }
    }
    let knots = &mut knots[..n];
    knots.sort_by(f64::total_cmp);
    // bisection over knot indices: last knot whose total is <= target
    let (mut lo, mut hi) = (0usize, n);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if fill_total(terms, knots[mid]) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x0 = knots[lo];
    let f0 = fill_total(terms, x0);
    if f0 > target {
        return None;
    }
    let slope: f64 = terms
        .iter()
        .filter(|t| x0 >= t.threshold && x0 < t.threshold + t.cap)
        .map(|t| t.slope)
        .sum();
    if slope <= 0.0 {
        // flat: target reached only if already equal
        return ((target - f0).abs() <= 1e-12 * target.max(1e-300)).then_some(x0);
    }
    let x = x0 + (target - f0) / slope;
    if hi < n && x > knots[hi] {
        return Some(knots[hi]);
    }
    Some(x)
}

/// Inequality-constrained power allocation at fixed `(k, alpha)`, with
/// `alpha < 1`. Returns `(p_tilde, [p1, p2], sum_rate)`.
///
/// The candidates are the optimum with the partner BS constraint dropped,
/// the optimum with the active BS constraint dropped, and the optimum with
/// both tight (the equality manifold). The best candidate satisfying every
/// constraint is returned.
pub fn jt_inequality(input: &PerFrameInput, k: Bs, user: User, alpha: f64) -> Option<(f64, [f64; 2], f64)> {
    if !(0.0..1.0).contains(&alpha) {
        return None;
    }
    let v = input.view(k, user);
    let s2 = v.noise;
    let jt = 1.0 - alpha;
    let cap = if alpha > 0.0 { v.bk_rate / alpha + v.ek } else { 0.0 };
    let tol = 1e-12 * (v.ak + v.akb);
    let spend_k = |pt: f64, p: [f64; 2]| jt * (v.a * p[0] + v.b * p[1]) + alpha * pt;
    let spend_kb = |p: [f64; 2]| jt * (v.c * p[0] + v.d * p[1]);
    let mut best: Option<(f64, [f64; 2], f64)> = None;
    let mut offer = |pt: f64, p: [f64; 2]| {
        let val = v.objective(alpha, pt, p);
        if best.map_or(true, |b| val > b.2) {
            best = Some((pt, p, val));
        }
    };

    // active BS constraint tight, partner slack
    if v.a > 0.0 && v.b > 0.0 {
        let mut terms = [
            Fill { slope: jt, threshold: v.a * s2, cap: f64::INFINITY },
            Fill { slope: jt, threshold: v.b * s2, cap: f64::INFINITY },
            Fill { slope: alpha, threshold: f64::INFINITY, cap },
        ];
        if alpha > 0.0 && v.gain > 0.0 {
            terms[2].threshold = s2 / v.gain;
        } else {
            terms[2].slope = 0.0;
        }
        let n = if terms[2].slope > 0.0 { 3 } else { 2 };
        if let Some(level) = water_level(&terms[..n], v.ak) {
            let p = [(level / v.a - s2).max(0.0), (level / v.b - s2).max(0.0)];
            let pt = if n == 3 { (level - s2 / v.gain).clamp(0.0, cap) } else { 0.0 };
            if spend_kb(p) <= v.akb + tol {
                offer(pt, p);
            }
        }
    }
    // partner constraint tight, active BS slack
    if v.c > 0.0 && v.d > 0.0 {
        let terms = [
            Fill { slope: jt, threshold: v.c * s2, cap: f64::INFINITY },
            Fill { slope: jt, threshold: v.d * s2, cap: f64::INFINITY },
        ];
        if let Some(level) = water_level(&terms, v.akb) {
            let p = [(level / v.c - s2).max(0.0), (level / v.d - s2).max(0.0)];
            let pt = if alpha > 0.0 && v.gain > 0.0 { cap } else { 0.0 };
            if spend_k(pt, p) <= v.ak + tol {
                offer(pt, p);
            }
        }
    }
    // both tight
    if let Some((pt, p, _)) = v.equality(alpha) {
        offer(pt, p);
    }
    best
}

/// Inequality-variant utility with BS `k` pinned, searched over `alpha`.
pub fn inequality_for_bs(input: &PerFrameInput, k: Bs, delta_alpha: f64) -> Option<PerFrameSolution> {
    let user = select_user(k, input.arrival[k.index()], &input.channel, input.noise);
    let mut best = Best::default();
    let mut f = |a: f64| -> f64 {
        if !(0.0..=1.0).contains(&a) {
            return f64::NEG_INFINITY;
        }
        let sol = if a >= 1.0 {
            // single-BS only: spend what the active BS may
            let v = input.view(k, user);
            let pt = v.ak.min(v.bk_rate + v.ek);
            Some((pt, [0.0, 0.0], v.objective(1.0, pt, [0.0, 0.0])))
        } else {
            jt_inequality(input, k, user, a)
        };
        match sol {
            Some((p_tilde, p, sum_rate)) => best.offer(PerFrameSolution {
                bs: k,
                user,
                alpha: a,
                p_tilde,
                p,
                sum_rate,
            }),
            None => f64::NEG_INFINITY,
        }
    };
    let d = delta_alpha;
    let at0 = f(0.0);
    let (lo, hi) = if at0 > f(d) {
        (0.0, d)
    } else if f(1.0) > f(1.0 - d) {
        (1.0 - d, 1.0)
    } else {
        let b = bisect_concave(0.0, 1.0, d, &mut f);
        final_bracket(&b, d, 0.0, &mut f)
    };
    golden(lo, hi, &mut f);
    best.0
}

/// Inequality-variant per-stage utility, maximized over the active BS.
pub fn per_stage_utility_inequality(input: &PerFrameInput, delta_alpha: f64) -> PerFrameSolution {
    best_over_bs(|k| inequality_for_bs(input, k, delta_alpha))
}

/// Greedy frame: spend up to everything available, budgets as caps.
pub fn per_frame_greedy(input: &PerFrameInput, delta_alpha: f64) -> PerFrameSolution {
    per_stage_utility_inequality(&input.with_full_budget(), delta_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_input(budget: [f64; 2]) -> PerFrameInput {
        PerFrameInput::full_budget([budget[0], budget[1]], [0.0, 0.0], ChannelMatrix::identity(), 1.0, 1.0).unwrap()
    }

    #[test]
    fn select_user_prefers_stronger_link() {
        let h = ChannelMatrix::from_real([[2.0, 0.5], [1.0, 1.0]]);
        assert_eq!(select_user(Bs::One, 1.0, &h, 1.0), User::One);
        assert_eq!(select_user(Bs::Two, 1.0, &h, 1.0), User::Two);
        let tie = ChannelMatrix::from_real([[1.0, 0.5], [1.0, 2.0]]);
        assert_eq!(select_user(Bs::One, 1.0, &tie, 1.0), User::One);
        assert_eq!(select_user(Bs::Two, 0.0, &h, 1.0), User::One);
    }

    #[test]
    fn identity_bounds() {
        let input = identity_input([2.0, 3.0]);
        let fb = feasibility_bounds(&input, Bs::One, 0.25).unwrap();
        assert!((fb.c0 - 0.75).abs() < 1e-15);
        assert_eq!(fb.c1, 2.0);
        assert_eq!(fb.c2, -3.0);
        assert_eq!(fb.p_tilde_min, 0.0);
        assert!((fb.p_tilde_max - 8.0).abs() < 1e-12);
        assert!(feasibility_bounds(&input, Bs::One, 0.0).is_err());
        assert!(feasibility_bounds(&input, Bs::One, 1.0).is_err());
    }

    #[test]
    fn alpha_zero_on_identity_is_decoupled() {
        let input = identity_input([2.0, 3.0]);
        let s = power_allocation_equality(&input, Bs::One, User::One, 0.0).unwrap().unwrap();
        assert_eq!(s.p, [2.0, 3.0]);
        assert!((s.sum_rate - (3.0f64.log2() + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_manifold_powers() {
        let input = identity_input([2.0, 3.0]);
        let alpha = 0.3;
        let s = power_allocation_equality(&input, Bs::One, User::One, alpha).unwrap().unwrap();
        assert!((s.p[1] - 3.0 / (1.0 - alpha)).abs() < 1e-12);
        assert!((s.p[0] - (2.0 - alpha * s.p_tilde) / (1.0 - alpha)).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_needs_empty_partner_budget() {
        let input = identity_input([2.0, 3.0]);
        assert!(power_allocation_equality(&input, Bs::One, User::One, 1.0).unwrap().is_none());
        let input = input.with_budget([2.0, 0.0]).unwrap();
        let s = power_allocation_equality(&input, Bs::One, User::One, 1.0).unwrap().unwrap();
        assert_eq!(s.p_tilde, 2.0);
        assert_eq!(s.p, [0.0, 0.0]);
    }

    #[test]
    fn subframe_objective_values() {
        let input = identity_input([1.0, 1.0]);
        assert_eq!(subframe_objective(&input, Bs::One, User::One, 0.5, 0.0, 0.0, 0.0), 0.0);
        assert!((subframe_objective(&input, Bs::One, User::One, 1.0, 1.0, 5.0, 5.0) - 1.0).abs() < 1e-15);
        let r = subframe_objective(&input, Bs::One, User::One, 0.0, 9.0, 1.0, 3.0);
        assert!((r - 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_budget_gives_zero_rate() {
        let input = identity_input([1.0, 1.0]).with_budget([0.0, 0.0]).unwrap();
        assert_eq!(per_stage_utility(&input, DEFAULT_DELTA_ALPHA).sum_rate, 0.0);
    }

    #[test]
    fn symmetric_identity_instance() {
        let input = identity_input([1.5, 1.5]);
        let s1 = per_stage_utility_for_bs(&input, Bs::One, DEFAULT_DELTA_ALPHA).unwrap();
        let s2 = per_stage_utility_for_bs(&input, Bs::Two, DEFAULT_DELTA_ALPHA).unwrap();
        assert!((s1.sum_rate - s2.sum_rate).abs() < 1e-9);
        assert_eq!(per_stage_utility(&input, DEFAULT_DELTA_ALPHA).bs, Bs::One);
    }

    #[test]
    fn bisection_finds_quadratic_peak() {
        let b = bisect_concave(0.0, 1.0, 1e-3, |a| -(a - 0.3141) * (a - 0.3141));
        assert!((b.alpha - 0.3141).abs() <= 2e-3);
        assert!(b.iterations <= 12);
    }

    #[test]
    fn water_level_segments() {
        let terms = [
            Fill { slope: 1.0, threshold: 1.0, cap: f64::INFINITY },
            Fill { slope: 1.0, threshold: 2.0, cap: 0.5 },
        ];
        assert_eq!(water_level(&terms, 0.0), Some(1.0));
        assert!((water_level(&terms, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert!((water_level(&terms, 2.0).unwrap() - 2.5).abs() < 1e-15);
        assert!((water_level(&terms, 3.0).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn conventional_on_identity_uses_both_budgets() {
        let input = identity_input([2.0, 3.0]);
        let (_, p, r) = jt_inequality(&input, Bs::One, User::One, 0.0).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 3.0).abs() < 1e-12);
        assert!((r - (3.0f64.log2() + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_row_powers_rejected() {
        let h = ChannelMatrix::from_real([[1.0, 1.0], [1.0, -1.0]]);
        let err = PerFrameInput::full_budget([1.0, 1.0], [0.0, 0.0], h, 1.0, 1.0).unwrap_err();
        assert_eq!(err, Error::DegenerateChannel);
    }

    #[test]
    fn budget_above_available_rejected() {
        let h = ChannelMatrix::identity();
        assert!(PerFrameInput::new([1.0, 0.0], [0.5, 0.5], [2.0, 0.0], h, 1.0, 1.0).is_err());
    }
}
