// Cross-checks of the closed-form and KKT solvers against grid searches that
// only use the raw constraint definitions.

use fjt_core::channel::ChannelMatrix;
use fjt_core::perframe::{
    feasibility_bounds, per_frame_greedy, per_stage_utility, per_stage_utility_for_bs, power_allocation_equality,
    stationary_ptilde, subframe_objective, PerFrameInput, PerFrameSolution, DEFAULT_DELTA_ALPHA,
};
use fjt_core::{Bs, Complex64, User};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_channel(rng: &mut ChaCha8Rng) -> ChannelMatrix {
    let mut e = [[Complex64::new(0.0, 0.0); 2]; 2];
    for row in e.iter_mut() {
        for z in row.iter_mut() {
            let scale = 10f64.powf(rng.random_range(-0.5..0.5));
            *z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale;
        }
    }
    ChannelMatrix::new(e)
}

fn random_input(rng: &mut ChaCha8Rng, full: bool) -> PerFrameInput {
    loop {
        let h = random_channel(rng);
        let battery = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
        let arrival = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
        let budget = if full {
            [battery[0] + arrival[0], battery[1] + arrival[1]]
        } else {
            [
                rng.random_range(0.0..1.0) * (battery[0] + arrival[0]),
                rng.random_range(0.0..1.0) * (battery[1] + arrival[1]),
            ]
        };
        if let Ok(input) = PerFrameInput::new(battery, arrival, budget, h, 1.0, 1.0) {
            return input;
        }
    }
}

fn obj(input: &PerFrameInput, k: Bs, user: User, alpha: f64, pt: f64, p: [f64; 2]) -> f64 {
    let g = input.channel.gain(user.index(), k.index());
    alpha * (1.0 + pt * g / input.noise).log2()
        + (1.0 - alpha) * ((1.0 + p[0] / input.noise).log2() + (1.0 + p[1] / input.noise).log2())
}

// JT powers that spend both budgets exactly, from a direct 2x2 solve.
fn manifold_point(input: &PerFrameInput, k: Bs, alpha: f64, pt: f64) -> [f64; 2] {
    let (ki, kb) = (k.index(), k.other().index());
    let rp = input.row_powers;
    let jt = 1.0 - alpha;
    let (m11, m12, m21, m22) = (jt * rp[ki][0], jt * rp[ki][1], jt * rp[kb][0], jt * rp[kb][1]);
    let (r1, r2) = (input.budget[ki] - alpha * pt, input.budget[kb]);
    let det = m11 * m22 - m12 * m21;
    [(r1 * m22 - m12 * r2) / det, (m11 * r2 - m21 * r1) / det]
}

// Grid maximum over the equality manifold at fixed (k, alpha).
fn equality_grid(input: &PerFrameInput, k: Bs, user: User, alpha: f64, n: usize) -> Option<f64> {
    let cap = input.battery[k.index()] / (alpha * input.frame_length) + input.arrival[k.index()];
    // p(pt) is affine; find where both components are non-negative
    let p0 = manifold_point(input, k, alpha, 0.0);
    let p1 = manifold_point(input, k, alpha, 1.0);
    let (mut lo, mut hi) = (0.0f64, cap);
    for i in 0..2 {
        let slope = p1[i] - p0[i];
        if slope.abs() < 1e-300 {
            if p0[i] < -1e-12 {
                return None;
            }
        } else if slope > 0.0 {
            lo = lo.max(-p0[i] / slope);
        } else {
            hi = hi.min(-p0[i] / slope);
        }
    }
    if lo > hi {
        return None;
    }
    let mut best = f64::NEG_INFINITY;
    for j in 0..=n {
        let pt = lo + (hi - lo) * j as f64 / n as f64;
        let p = manifold_point(input, k, alpha, pt);
        best = best.max(obj(input, k, user, alpha, pt, [p[0].max(0.0), p[1].max(0.0)]));
    }
    Some(best)
}

#[test]
fn equality_allocation_matches_manifold_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 300 {
        let input = random_input(&mut rng, false);
        let k = if rng.random_bool(0.5) { Bs::One } else { Bs::Two };
        let user = if rng.random_bool(0.5) { User::One } else { User::Two };
        let alpha = rng.random_range(0.01..0.99);
        let sol = power_allocation_equality(&input, k, user, alpha).unwrap();
        let grid = equality_grid(&input, k, user, alpha, 20_000);
        match (sol, grid) {
            (Some(s), Some(g)) => {
                assert!(s.sum_rate >= g - 1e-9, "solver {} below grid {}", s.sum_rate, g);
                assert!(s.sum_rate <= g + 1e-4, "solver {} above grid {}", s.sum_rate, g);
                checked += 1;
            }
            (None, None) => {}
            (s, g) => panic!("feasibility disagreement: {s:?} vs {g:?}"),
        }
    }
}

#[test]
fn stationary_point_has_zero_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut interior = 0;
    for _ in 0..2000 {
        let input = random_input(&mut rng, false);
        let k = if rng.random_bool(0.5) { Bs::One } else { Bs::Two };
        let alpha = rng.random_range(0.01..0.99);
        let fb = feasibility_bounds(&input, k, alpha).unwrap();
        if !fb.is_feasible() {
            continue;
        }
        let pt = stationary_ptilde(&input, k, User::One, alpha, &fb);
        assert!(pt >= fb.p_tilde_min && pt <= fb.p_tilde_max);
        let h = 1e-6 * pt.max(1e-3);
        if pt - h <= fb.p_tilde_min || pt + h >= fb.p_tilde_max {
            continue;
        }
        let f = |x: f64| {
            let p = manifold_point(&input, k, alpha, x);
            obj(&input, k, User::One, alpha, x, p)
        };
        let deriv = (f(pt + h) - f(pt - h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-6, "slope {deriv} at interior point");
        interior += 1;
    }
    assert!(interior > 100);
}

#[test]
fn equality_value_is_concave_in_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut tests = 0;
    while tests < 3000 {
        let input = random_input(&mut rng, false);
        let k = if rng.random_bool(0.5) { Bs::One } else { Bs::Two };
        let f = |a: f64| power_allocation_equality(&input, k, User::One, a).unwrap().map(|s| s.sum_rate);
        let (a1, a2, gamma) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (Some(f1), Some(f2)) = (f(a1), f(a2)) else { continue };
        let mid = f(gamma * a1 + (1.0 - gamma) * a2).expect("feasible set is convex in alpha");
        assert!(gamma * f1 + (1.0 - gamma) * f2 <= mid + 1e-7);
        tests += 1;
    }
}

#[test]
fn equality_residuals_are_tiny() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..500 {
        let input = random_input(&mut rng, false);
        let s = per_stage_utility(&input, DEFAULT_DELTA_ALPHA);
        if s.sum_rate == 0.0 {
            continue;
        }
        let used = s.energy_use(&input.row_powers);
        for k in 0..2 {
            let scale = input.budget[k].max(1e-12);
            assert!((used[k] - input.budget[k]).abs() <= 1e-9 * scale.max(1.0), "{used:?} vs {:?}", input.budget);
        }
    }
}

// Grid over (alpha, p_tilde, p1) with p2 set to the largest feasible value;
// the objective is increasing in p2, so that coordinate is exact.
fn inequality_grid(input: &PerFrameInput) -> f64 {
    let mut best = 0.0f64;
    for k in Bs::ALL {
        let user = fjt_core::perframe::select_user(k, input.arrival[k.index()], &input.channel, input.noise);
        let (ki, kb) = (k.index(), k.other().index());
        let rp = input.row_powers;
        let inner = |alpha: f64, pt: f64, p1: f64| -> f64 {
            let jt = 1.0 - alpha;
            if alpha * pt > input.battery[ki] / input.frame_length + alpha * input.arrival[ki] + 1e-12 {
                return f64::NEG_INFINITY;
            }
            if jt <= 0.0 {
                return if alpha * pt <= input.budget[ki] + 1e-12 { obj(input, k, user, 1.0, pt, [0.0, 0.0]) } else { f64::NEG_INFINITY };
            }
            let rem_k = (input.budget[ki] - alpha * pt) / jt - rp[ki][0] * p1;
            let rem_kb = input.budget[kb] / jt - rp[kb][0] * p1;
            if rem_k < -1e-12 || rem_kb < -1e-12 {
                return f64::NEG_INFINITY;
            }
            let lim = |rem: f64, w: f64| if w > 0.0 { rem.max(0.0) / w } else { f64::INFINITY };
            let p2 = lim(rem_k, rp[ki][1]).min(lim(rem_kb, rp[kb][1]));
            obj(input, k, user, alpha, pt, [p1, p2])
        };
        // concave in every variable jointly: coarse grid then zoom
        let zoom = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize| -> (f64, f64) {
            let (mut lo, mut hi) = (lo, hi);
            let mut arg = lo;
            let mut val = f64::NEG_INFINITY;
            for _ in 0..6 {
                for j in 0..=n {
                    let x = lo + (hi - lo) * j as f64 / n as f64;
                    let v = f(x);
                    if v > val {
                        val = v;
                        arg = x;
                    }
                }
                let w = (hi - lo) / n as f64;
                lo = (arg - 2.0 * w).max(lo);
                hi = (arg + 2.0 * w).min(hi);
            }
            (arg, val)
        };
        let p1_max = |alpha: f64, pt: f64| {
            let jt = 1.0 - alpha;
            let mut m = f64::INFINITY;
            if rp[ki][0] > 0.0 {
                m = m.min((input.budget[ki] - alpha * pt).max(0.0) / (jt * rp[ki][0]));
            }
            if rp[kb][0] > 0.0 {
                m = m.min(input.budget[kb] / (jt * rp[kb][0]));
            }
            m
        };
        let over_alpha = |alpha: f64| -> f64 {
            let pt_max = if alpha > 0.0 {
                (input.battery[ki] / input.frame_length + alpha * input.arrival[ki]).min(input.budget[ki]) / alpha
            } else {
                0.0
            };
            let over_pt = |pt: f64| -> f64 {
                if alpha >= 1.0 {
                    return inner(alpha, pt, 0.0);
                }
                zoom(&|p1| inner(alpha, pt, p1), 0.0, p1_max(alpha, pt), 16).1
            };
            if pt_max <= 0.0 {
                return over_pt(0.0);
            }
            zoom(&over_pt, 0.0, pt_max, 16).1
        };
        best = best.max(zoom(&over_alpha, 0.0, 1.0, 16).1);
    }
    best
}

#[test]
fn greedy_matches_inequality_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..60 {
        let input = random_input(&mut rng, true);
        let s = per_frame_greedy(&input, DEFAULT_DELTA_ALPHA);
        let grid = inequality_grid(&input);
        assert!(s.sum_rate >= grid - 1e-3, "greedy {} vs grid {}", s.sum_rate, grid);
        assert!(s.sum_rate <= grid + 1e-3, "greedy {} above grid {}", s.sum_rate, grid);
    }
}

fn slacks(input: &PerFrameInput, s: &PerFrameSolution) -> [f64; 2] {
    let used = s.energy_use(&input.row_powers);
    [input.budget[0] - used[0], input.budget[1] - used[1]]
}

#[test]
fn greedy_optimum_has_a_tight_jt_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..500 {
        let input = random_input(&mut rng, true);
        let s = per_frame_greedy(&input, DEFAULT_DELTA_ALPHA);
        let sl = slacks(&input, &s);
        let rel = |k: usize| sl[k] / input.budget[k].max(1e-300);
        assert!(sl[0] >= -1e-9 && sl[1] >= -1e-9, "neg slack {sl:?} {s:?} {input:?}");
        assert!(rel(0).min(rel(1)) < 1e-6, "slacks {sl:?} budgets {:?}", input.budget);
    }
}

#[test]
fn inequality_dominates_equality_and_alpha_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let input = random_input(&mut rng, false);
        let eq = per_stage_utility(&input, DEFAULT_DELTA_ALPHA);
        let ineq = fjt_core::perframe::per_stage_utility_inequality(&input, DEFAULT_DELTA_ALPHA);
        assert!(ineq.sum_rate >= eq.sum_rate - 1e-9);
        if let Some(zf) = power_allocation_equality(&input, Bs::One, User::One, 0.0).unwrap() {
            assert!(eq.sum_rate >= zf.sum_rate - 1e-12);
        }
        for k in Bs::ALL {
            if let Some(s) = per_stage_utility_for_bs(&input, k, DEFAULT_DELTA_ALPHA) {
                assert!(s.sum_rate <= eq.sum_rate);
                let direct = subframe_objective(&input, s.bs, s.user, s.alpha, s.p_tilde, s.p[0], s.p[1]);
                assert!((direct - s.sum_rate).abs() < 1e-12);
            }
        }
    }
}

// The equality variant is not monotone in the budgets (spending more at one
// BS can force a worse JT split), but the inequality variant must be.
#[test]
fn larger_budget_never_hurts_with_caps() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..300 {
        let input = random_input(&mut rng, false);
        let k = rng.random_range(0..2);
        let mut budget = input.budget;
        budget[k] += rng.random_range(0.0..1.0) * (input.available(k) - budget[k]);
        let bigger = input.with_budget(budget).unwrap();
        let ineq = fjt_core::perframe::per_stage_utility_inequality;
        let (a, b) = (ineq(&input, 1e-3), ineq(&bigger, 1e-3));
        assert!(b.sum_rate >= a.sum_rate - 1e-9, "{} < {}", b.sum_rate, a.sum_rate);
    }
}
