use std::collections::BTreeSet;

use adp_core::mdp::{ArrivalLaw, GraphLayout};
use adp_core::model::DecisionOptions;
use adp_core::oracle::{
    enumerate_actions, exact_value_iteration, keystone_check, random_state, tiny_instance, EnumerationBudget,
};
use adp_core::{Action, Instance, InstanceConfig, JobType, RewardParams, State, VfaSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small stochastic instance whose reachable state space stays in the
/// thousands.
fn small_stochastic(rewards: RewardParams) -> Instance {
    let cfg = InstanceConfig {
        vertices: 3,
        max_degree: 2,
        max_new_jobs: 1,
        accumulation_cap: 1,
        capacity: 1,
        min_due: 1,
        max_due: 2,
        discount: 0.9,
        seed: 1,
        arrivals: ArrivalLaw::Uniform,
        layout: GraphLayout::Line,
    };
    Instance::new(cfg, rewards).unwrap()
}

/// Recursive generator written from the feasibility rules directly, without
/// `validate_action`.
fn generate(inst: &Instance, s: &State) -> BTreeSet<Action> {
    let loc = s.location;
    let cfg = &inst.config;
    let mut next = vec![loc];
    next.extend(inst.graph.neighbors(loc).iter().copied());
    let types: Vec<(JobType, u32)> = s
        .jobs()
        .filter(|(j, _)| j.at == loc && (j.carried || j.due > 0))
        .map(|(j, k)| (*j, k))
        .collect();

    fn walk(types: &[(JobType, u32)], loc: usize, x: Action, out: &mut Vec<Action>) {
        let Some((&(j, k), rest)) = types.split_first() else {
            out.push(x);
            return;
        };
        if j.carried && (j.dest == loc || j.due == 0) {
            walk(rest, loc, x.unload(j, k), out);
            return;
        }
        for c in 0..=k {
            let y = if j.carried { x.clone().unload(j, c) } else { x.clone().load(j, c) };
            walk(rest, loc, y, out);
        }
    }

    let mut out = BTreeSet::new();
    for n in next {
        let mut all = Vec::new();
        walk(&types, loc, Action::move_to(n), &mut all);
        for x in all {
            let loaded: u32 = x.loads.values().sum();
            let unloaded: u32 = x.unloads.values().sum();
            let returned: u32 = x
                .unloads
                .iter()
                .filter(|(j, _)| j.dest != loc && j.due > 0)
                .map(|(_, k)| k)
                .sum();
            let on_board = s.carried_total() + loaded - unloaded;
            let waiting = s.waiting_at(loc) + returned - loaded;
            if on_board <= cfg.capacity && waiting <= cfg.accumulation_cap {
                out.insert(x);
            }
        }
    }
    out
}

#[test]
fn enumeration_matches_independent_generator() {
    let inst = tiny_instance().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut total = 0;
    for _ in 0..300 {
        let s = random_state(&inst, &mut rng);
        let listed = enumerate_actions(&inst, &s, EnumerationBudget::default()).unwrap();
        let set: BTreeSet<Action> = listed.iter().cloned().collect();
        assert_eq!(set.len(), listed.len(), "duplicates for {s:?}");
        assert_eq!(set, generate(&inst, &s), "state {s:?}");
        total += listed.len();
    }
    assert!(total > 300);
}

/// Uniform over valid actions by rejection from the enclosing box.
fn uniform_valid_action(inst: &Instance, s: &State, rng: &mut ChaCha8Rng) -> Action {
    let loc = s.location;
    let cands = inst.graph.candidates(loc);
    loop {
        let mut x = Action::move_to(cands[rng.random_range(0..cands.len())]);
        for (&j, k) in s.jobs().filter(|(j, _)| j.at == loc) {
            let c = rng.random_range(0..=k);
            x = if j.carried { x.unload(j, c) } else { x.load(j, c) };
        }
        if inst.validate_action(s, &x).is_empty() {
            return x;
        }
    }
}

#[test]
fn sampled_valid_actions_are_enumerated() {
    let inst = tiny_instance().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let s = random_state(&inst, &mut rng);
        let all = enumerate_actions(&inst, &s, EnumerationBudget::default()).unwrap();
        for _ in 0..5 {
            let x = uniform_valid_action(&inst, &s, &mut rng);
            assert!(all.binary_search(&x).is_ok(), "{x:?} missing for {s:?}");
        }
    }
}

#[test]
fn milp_matches_enumeration_on_tiny_states() {
    let inst = tiny_instance().unwrap();
    let specs = [VfaSpec::Poly, VfaSpec::Neural { hidden: vec![10] }];
    let rep = keystone_check(&inst, &specs, 200, 7, &DecisionOptions::default(), 1e-6).unwrap();
    assert_eq!(rep.checks, 800);
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn zero_reward_instance_is_worth_nothing() {
    let inst = Instance::shuttle(RewardParams::zero()).unwrap();
    let t = exact_value_iteration(&inst, 0.9, 1e-12, 10_000, EnumerationBudget::default()).unwrap();
    assert!(t.values.iter().all(|&v| v == 0.0));

    // No arrivals ever: the empty state is absorbing and only costs travel.
    let cfg = InstanceConfig {
        max_new_jobs: 0,
        arrivals: ArrivalLaw::Fixed,
        ..Instance::shuttle(RewardParams::default()).unwrap().config
    };
    let inst = Instance::new(cfg, RewardParams::default()).unwrap();
    let t = exact_value_iteration(&inst, 0.9, 1e-12, 10, EnumerationBudget::default()).unwrap();
    assert_eq!(t.len(), 2);
    assert!(t.values.iter().all(|&v| v == 0.0));
}

#[test]
fn shuttle_values_match_the_geometric_series() {
    // Steady cycle: deliver (+10), unload and load (-0.5 each), move one unit
    // toward the destination (+2 - 1) = 10 per epoch. The opening epoch has
    // no delivery: 2 - 1 - 0.5 = 0.5.
    let inst = Instance::shuttle(RewardParams::default()).unwrap();
    let rho = 0.9;
    let t = exact_value_iteration(&inst, rho, 1e-11, 10_000, EnumerationBudget::default()).unwrap();
    let steady = 10.0 / (1.0 - rho);
    let opening = 0.5 + rho * steady;
    let fresh = |loc| State::with_jobs(loc, [(JobType::waiting(0, 1, 5), 1), (JobType::waiting(1, 0, 5), 1)]);
    for loc in 0..2 {
        let v = t.value(&fresh(loc)).unwrap();
        assert!((v - opening).abs() < 1e-8, "{v} vs {opening}");
    }
    // Arriving with the cargo at its destination, next job waiting.
    let s = State::with_jobs(
        1,
        [
            (JobType::carried(1, 1, 4), 1),
            (JobType::waiting(0, 1, 5), 1),
            (JobType::waiting(1, 0, 5), 1),
        ],
    );
    let v = t.value(&s).unwrap();
    assert!((v - steady).abs() < 1e-8, "{v} vs {steady}");
}

#[test]
fn stochastic_table_is_a_bellman_fixed_point() {
    let inst = small_stochastic(RewardParams::default());
    let t = exact_value_iteration(&inst, 0.9, 1e-9, 100_000, EnumerationBudget::default()).unwrap();
    assert!(t.len() > 1000);
    assert!(t.residual() <= 1e-8, "residual {}", t.residual());
}

#[test]
fn value_iteration_rises_monotonically_from_zero() {
    let rewards = RewardParams {
        distance: 0.0,
        travel: 0.0,
        handling: 0.0,
        penalty: 0.0,
        ..RewardParams::default()
    };
    let inst = small_stochastic(rewards);
    let t = exact_value_iteration(&inst, 0.9, 1e-9, 100_000, EnumerationBudget::default()).unwrap();
    let mut v = vec![0.0; t.len()];
    for _ in 0..60 {
        let next = t.bellman(&v);
        assert!(next.iter().zip(&v).all(|(a, b)| *a >= b - 1e-12));
        assert!(next.iter().zip(&t.values).all(|(a, b)| *a <= b + 1e-8));
        v = next;
    }
    assert!(v.iter().any(|&x| x > 0.0));
}

#[test]
fn oversized_state_spaces_are_refused() {
    let inst = tiny_instance().unwrap();
    assert!(exact_value_iteration(&inst, 0.9, 1e-6, 1000, EnumerationBudget::default()).is_err());
}
