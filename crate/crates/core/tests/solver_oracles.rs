mod support;

use adp_core::solver::{
    check_solution, parse_lp, solve_lp, solve_milp, write_lp, Branching, LpProblem, Sense, SolveStatus, SolverConfig,
    VarKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut feasible = 0;
    for case in 0..150 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let p = support::random_problem(&mut rng, n, m, 0.0);
        let r = solve_lp(&p, &cfg()).unwrap();
        match support::vertex_enumeration(&p) {
            Some(v) => {
                feasible += 1;
                assert_eq!(r.status, SolveStatus::Optimal, "case {case}");
                assert!((r.objective - v).abs() < 1e-6, "case {case}: {} vs {v}", r.objective);
                assert!(check_solution(&p, &r.values, (&cfg()).into()).is_empty());
            }
            None => assert_eq!(r.status, SolveStatus::Infeasible, "case {case}"),
        }
    }
    assert!(feasible >= 50, "only {feasible} feasible cases");
}

#[test]
fn random_milps_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut feasible = 0;
    for case in 0..150 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=4);
        let p = support::random_problem(&mut rng, n, m, 0.7);
        let want = support::brute_force_milp(&p);
        for rule in [Branching::MostFractional, Branching::PseudoCost] {
            let c = SolverConfig { branching: rule, ..cfg() };
            let r = solve_milp(&p, &c).unwrap();
            match want {
                Some(v) => {
                    assert_eq!(r.status, SolveStatus::Optimal, "case {case}");
                    assert!((r.objective - v).abs() < 1e-6, "case {case}: {} vs {v}", r.objective);
                    assert!(check_solution(&p, &r.values, (&c).into()).is_empty());
                    assert!(r.objective <= r.root_bound + 1e-9);
                }
                None => assert_eq!(r.status, SolveStatus::Infeasible, "case {case}"),
            }
        }
        feasible += usize::from(want.is_some());
    }
    assert!(feasible >= 50, "only {feasible} feasible cases");
}

#[test]
fn knapsack_twelve_items_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(1..30) as f64).collect();
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(1..40) as f64).collect();
        let cap = w.iter().sum::<f64>() * 0.4;
        let mut p = LpProblem::new();
        let xs: Vec<usize> = (0..12).map(|i| p.add_var(format!("x{i}"), VarKind::Binary, 0.0, 1.0, v[i])).collect();
        let row: Vec<(usize, f64)> = xs.iter().map(|&j| (j, w[j])).collect();
        p.add_constraint("cap", &row, Sense::Le, cap);
        let mut best = 0.0f64;
        for mask in 0u32..1 << 12 {
            let (tw, tv) = (0..12)
                .filter(|i| mask >> i & 1 == 1)
                .fold((0.0, 0.0), |(a, b), i| (a + w[i], b + v[i]));
            if tw <= cap {
                best = best.max(tv);
            }
        }
        let r = solve_milp(&p, &cfg()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - best).abs() < 1e-6);
    }
}

#[test]
fn twenty_variable_milps_are_sound() {
    // Too large for the brute-force oracle: check soundness, the relaxation
    // bound, and agreement between branching rules.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..30 {
        let p = support::random_problem(&mut rng, 20, 8, 0.5);
        let a = solve_milp(&p, &cfg()).unwrap();
        let b = solve_milp(&p, &SolverConfig { branching: Branching::PseudoCost, ..cfg() }).unwrap();
        assert_eq!(a.status, b.status);
        if a.status == SolveStatus::Optimal {
            assert!((a.objective - b.objective).abs() < 1e-6);
            assert!(check_solution(&p, &a.values, (&cfg()).into()).is_empty());
            assert!(a.objective <= a.root_bound + 1e-9);
        }
    }
}

#[test]
fn solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let p = support::random_problem(&mut rng, 10, 6, 0.5);
        let a = solve_milp(&p, &cfg()).unwrap();
        let b = solve_milp(&p, &cfg()).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.values, b.values);
    }
}

#[test]
fn lp_text_round_trip_preserves_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let p = support::random_problem(&mut rng, 6, 4, 0.5);
        let q = parse_lp(&write_lp(&p)).unwrap();
        assert_eq!(p, q);
        let (a, b) = (solve_milp(&p, &cfg()).unwrap(), solve_milp(&q, &cfg()).unwrap());
        assert_eq!(a.status, b.status);
        if a.status == SolveStatus::Optimal {
            assert_eq!(a.objective, b.objective);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn checker_matches_independent_checker(seed in any::<u64>(), scale in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..8);
        let m = rng.random_range(1..6);
        let p = support::random_problem(&mut rng, n, m, 0.5);
        let x: Vec<f64> = (0..n)
            .map(|j| {
                let mid = 0.5 * (p.lower[j] + p.upper[j]);
                let r = match rng.random_range(0..4) {
                    0 => p.lower[j].round(),
                    1 => mid + rng.random_range(-scale..=scale),
                    2 => p.upper[j] + 1e-8 * rng.random_range(-20.0..20.0),
                    _ => rng.random_range(-5.0..5.0),
                };
                r
            })
            .collect();
        let tol = (&SolverConfig::default()).into();
        let a = check_solution(&p, &x, tol);
        let b = support::independent_violations(&p, &x, 1e-7, 1e-6);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn simplex_terminates_on_degenerate_inputs(seed in any::<u64>()) {
        // Many rows through the origin make most pivots degenerate.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..10);
        let mut p = LpProblem::new();
        for j in 0..n {
            p.add_var(format!("x{j}"), VarKind::Continuous, 0.0, 1.0, rng.random_range(-2..=3) as f64);
        }
        for i in 0..rng.random_range(3..15) {
            let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-2..=2) as f64)).collect();
            p.add_constraint(format!("r{i}"), &coeffs, Sense::Le, 0.0);
        }
        let r = solve_lp(&p, &SolverConfig { stall_threshold: 3, ..SolverConfig::default() }).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        if n <= 5 {
            let want = support::vertex_enumeration(&p);
            prop_assert!((r.objective - want.unwrap()).abs() < 1e-6);
        }
    }
}
