use ppde::grid::{build_grid, make_operator, Domain};
use ppde::model::{affine_problem, example2_problem, linear_validation_problem, Example2Params};
use ppde::path::dupire_distance;
use ppde::verification::{
    build_phi_fd, estimate_nonlinear_expectation, ChainSpec, Direction, PathFunctional,
};
use ppde::{Boundary, DiscretePath, FeatureRule, SchemeConfig, SchemeKind, StateGrid, ValueSlice};
use proptest::prelude::*;

fn path(dim: usize, dt: f64, values: Vec<f64>) -> DiscretePath {
    DiscretePath::new(dim, dt, values).unwrap()
}

fn path_strategy(steps: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    steps.prop_flat_map(|n| prop::collection::vec(-3.0..3.0f64, n)).prop_map(|tail| {
        let mut v = vec![0.0];
        v.extend(tail);
        v
    })
}

proptest! {
    #[test]
    fn concat_is_associative(
        a in path_strategy(1..8),
        b in path_strategy(1..8),
        c in path_strategy(1..8),
        ka in 0usize..8,
        kb in 0usize..8,
    ) {
        let dt = 0.125;
        let (w, w1, w2) = (path(1, dt, a), path(1, dt, b), path(1, dt, c));
        let ka = ka.min(w.steps());
        let kb = kb.min(w1.steps());
        let (t, s) = (ka as f64 * dt, kb as f64 * dt);
        let left = w.concat(t, &w1).unwrap().concat(t + s, &w2).unwrap();
        let right = w.concat(t, &w1.concat(s, &w2).unwrap()).unwrap();
        prop_assert_eq!(left.steps(), right.steps());
        for (x, y) in left.values().iter().zip(right.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bump_by_zero_freezes_the_path(v in path_strategy(2..10), k in 0usize..9) {
        let dt = 0.1;
        let w = path(1, dt, v);
        let k = k.min(w.steps() - 1);
        let bumped = w.bump(k as f64 * dt, dt, &[0.0]).unwrap();
        prop_assert_eq!(bumped.stopped(k + 1), w.stopped(k));
    }

    #[test]
    fn incremental_features_match_batch(v in path_strategy(1..200)) {
        let dt = 0.01;
        let n = v.len() - 1;
        let w = path(1, dt, v);
        let rule = FeatureRule::RunningIntegral;
        let mut state = rule.initial(1);
        for k in 0..n {
            let z = [w.point(k + 1)[0] - w.point(k)[0]];
            state = rule.update(&state, &z, dt);
            let batch = rule.from_path(&w, k + 1);
            prop_assert!((state.features[0] - batch.features[0]).abs() <= 1e-10 * (k + 1) as f64);
            prop_assert!((state.x[0] - batch.x[0]).abs() <= 1e-10 * (k + 1) as f64);
        }
    }

    #[test]
    fn example2_generator_is_nondecreasing_in_gamma(
        x in -0.8..0.8f64,
        yb in -0.8..0.8f64,
        z in -3.0..3.0f64,
        g in -5.0..5.0f64,
        dg in 0.0..5.0f64,
    ) {
        let p = example2_problem(Example2Params::default()).unwrap();
        prop_assert!(p.g1(0.3, x, yb, 0.0, z, g) <= p.g1(0.3, x, yb, 0.0, z, g + dg) + 1e-12);
    }

    #[test]
    fn inf_never_exceeds_sup(b in 0.1..1.0f64, k in 0.0..1.0f64, seed in 0u64..1000) {
        let (h, dx, a) = (0.025, 0.15, 0.2);
        let spec = ChainSpec {
            controls: vec![
                build_phi_fd(a, -b, h, dx).unwrap().increment(),
                build_phi_fd(a, b, h, dx).unwrap().increment(),
            ],
            h,
            steps: 3,
        };
        let f = move |p: &[f64]| (p.iter().map(|x| (x - k).abs()).sum::<f64>()).min(5.0);
        let phi = PathFunctional { f: &f, bound: 5.0 };
        let lo = estimate_nonlinear_expectation(&spec, &phi, Direction::Inf, 8, seed).unwrap();
        let hi = estimate_nonlinear_expectation(&spec, &phi, Direction::Sup, 8, seed).unwrap();
        prop_assert!(lo <= hi);
    }
}

#[test]
fn dupire_triangle_inequality() {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(1000));
    let dt = 0.1;
    let strat = (
        path_strategy(10..11),
        path_strategy(10..11),
        path_strategy(10..11),
        0usize..=10,
        0usize..=10,
        0usize..=10,
    );
    runner
        .run(&strat, |(a, b, c, i, j, k)| {
            let (p, q, r) = (path(1, dt, a), path(1, dt, b), path(1, dt, c));
            let (ti, tj, tk) = (i as f64 * dt, j as f64 * dt, k as f64 * dt);
            let pq = dupire_distance((ti, &p), (tj, &q)).unwrap();
            let qr = dupire_distance((tj, &q), (tk, &r)).unwrap();
            let pr = dupire_distance((ti, &p), (tk, &r)).unwrap();
            prop_assert!(pr <= pq + qr + 1e-12);
            prop_assert!(dupire_distance((ti, &p), (ti, &p)).unwrap() == 0.0);
            Ok(())
        })
        .unwrap();
}

fn free_y(problem: &ppde::PpdeProblem, kind: SchemeKind, config: &SchemeConfig) -> StateGrid {
    let domain = Domain { x: (-1.0, 1.0), y: (-1.0, 1.0) };
    let g = build_grid(problem, kind, config, &domain).unwrap();
    StateGrid::new(
        g.x,
        g.y,
        [Boundary::NeumannZero, Boundary::NeumannZero],
        [Boundary::Free, Boundary::Free],
    )
    .unwrap()
}

/// One step of an affine problem on a random ordered pair `v <= w`; returns
/// `(T v, T w, ‖w - v‖, lip_y, h)`.
fn ordered_step(c: f64, mu: f64, a: f64, f: f64, seed: u64, kind: SchemeKind) -> (Vec<f64>, Vec<f64>, f64, f64, f64) {
    let p = affine_problem(c, mu, a, f, 1.0);
    let h = 0.02;
    let cfg = SchemeConfig::with_h(h);
    let g = free_y(&p, kind, &cfg);
    let op = make_operator(kind, &p, &g, &cfg).unwrap();
    let mut s = seed;
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let v: Vec<f64> = (0..g.len()).map(|_| 2.0 * next() - 1.0).collect();
    let w: Vec<f64> = v.iter().map(|x| x + if next() < 0.3 { next() } else { 0.0 }).collect();
    let gap = v.iter().zip(&w).map(|(a, b)| b - a).fold(0.0, f64::max);
    let tv = op.step(&ValueSlice { t: 0.5 + h, values: v }, 0.5).unwrap().values;
    let tw = op.step(&ValueSlice { t: 0.5 + h, values: w }, 0.5).unwrap().values;
    (tv, tw, gap, p.constants.lip_y, h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Ordered inputs give ordered outputs, with the Lipschitz-in-y slack.
    #[test]
    fn grid_schemes_are_monotone(
        c in -0.5..0.5f64,
        mu in -0.3..0.3f64,
        a in 0.02..0.2f64,
        f in -1.0..1.0f64,
        seed in any::<u64>(),
        kind in prop::sample::select(vec![SchemeKind::Fd, SchemeKind::Trinomial, SchemeKind::SemiLagrangian]),
    ) {
        // the semi-Lagrangian discount multiplies the undisplaced value, so a negative
        // rate breaks nodewise ordering at O(h); see the bounded-defect test below
        let c = if kind == SchemeKind::SemiLagrangian { c.abs() } else { c };
        let (tv, tw, gap, lip_y, h) = ordered_step(c, mu, a, f, seed, kind);
        let slack = lip_y * h * h * gap + 1e-13;
        for (x, y) in tv.iter().zip(&tw) {
            prop_assert!(*x <= y + slack, "{} > {}", x, y);
        }
    }

    #[test]
    fn negative_discount_defect_is_bounded(
        c in -0.5..0.0f64,
        mu in -0.3..0.3f64,
        a in 0.02..0.2f64,
        seed in any::<u64>(),
    ) {
        let (tv, tw, gap, _, h) = ordered_step(c, mu, a, 0.1, seed, SchemeKind::SemiLagrangian);
        for (x, y) in tv.iter().zip(&tw) {
            prop_assert!(*x <= y + c.abs() * h * gap + 1e-13);
        }
    }

    /// The x-Lipschitz constant of a slice grows by at most `1 + C h` per step.
    #[test]
    fn lipschitz_constant_growth(
        c in -0.5..0.5f64,
        mu in -0.3..0.3f64,
        a in 0.02..0.2f64,
        freq in 0.5..4.0f64,
        kind in prop::sample::select(vec![SchemeKind::Fd, SchemeKind::Trinomial, SchemeKind::SemiLagrangian]),
    ) {
        let p = affine_problem(c, mu, a, 0.3, 1.0);
        let h = 0.02;
        let cfg = SchemeConfig::with_h(h);
        let g = free_y(&p, kind, &cfg);
        let op = make_operator(kind, &p, &g, &cfg).unwrap();
        let nx = g.x.count;
        let mut slice = ValueSlice {
            t: 1.0,
            values: (0..g.len()).map(|i| (freq * g.x.coord(i % nx)).sin()).collect(),
        };
        for k in 1..=5 {
            let t = 1.0 - k as f64 * h;
            let out = op.step(&slice, t).unwrap();
            let before = g.lipschitz(&slice.values).0;
            let after = g.lipschitz(&out.values).0;
            prop_assert!(after <= (1.0 + p.constants.lip_y * h) * before + 1e-12);
            slice = out;
        }
    }
}

#[test]
fn linear_exact_solution_meets_terminal_condition() {
    let p = linear_validation_problem(0.1, 0.04, 1.0).unwrap();
    for x in [-1.0, -0.2, 0.0, 0.7] {
        for yb in [-0.5, 0.0, 0.3] {
            let exact = p.exact1(1.0, x, yb).unwrap();
            let terminal = (p.terminal)(&ppde::StateRef { t: 1.0, x: &[x], features: &[yb] });
            assert_eq!(exact, terminal);
        }
    }
}
