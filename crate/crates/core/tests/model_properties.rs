mod support;

use adp_core::features::{affine_form, extract, FeatureBounds, FeatureSpec};
use adp_core::model::{decide, decision_model, propagate_bounds, refine_bounds, DecisionOptions};
use adp_core::oracle::{action_value, random_state};
use adp_core::solver::{check_solution, solve_milp, SolveStatus, SolverConfig};
use adp_core::{Instance, InstanceConfig, NeuralVfa, RewardParams, Vfa, VfaSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(vertices: usize, seed: u64) -> Instance {
    let cfg = InstanceConfig {
        vertices,
        seed,
        ..InstanceConfig::default()
    };
    Instance::new(cfg, RewardParams::default()).unwrap()
}

const RHO: f64 = 0.9;

#[test]
fn fixed_action_objective_equals_reward_plus_value() {
    let inst = instance(5, 1);
    let spec = FeatureSpec::new(&inst.config, false);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for shape in ["pl", "nn:20", "nn:20,20,20"] {
        for _ in 0..15 {
            let vfa = VfaSpec::parse(shape).unwrap().he_init(spec.len(), &mut rng).unwrap();
            let s = random_state(&inst, &mut rng);
            let x = inst.random_action(&s, &mut rng);
            let mut m = decision_model(&inst, &spec, Some(&vfa), &s, RHO, 1.0).unwrap();
            m.fix_action(&x).unwrap();
            let r = solve_milp(&m.problem, &SolverConfig::default()).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            let phi = extract(&inst, &spec, &s, &x).unwrap();
            let v = match &vfa {
                Vfa::Poly(p) => p.weights.iter().zip(phi.iter()).map(|(w, f)| w * f).sum::<f64>(),
                Vfa::Neural(n) => support::reference_forward(n, &phi),
            };
            let want = inst.reward(&s, &x).unwrap() + RHO * v;
            assert!((r.objective - want).abs() < 1e-6, "{shape}: {} vs {want}", r.objective);
        }
    }
}

#[test]
fn extracted_action_attains_the_optimum() {
    let inst = instance(4, 2);
    let spec = FeatureSpec::new(&inst.config, false);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for shape in ["pl", "nn:10", "nn:10,10"] {
        for _ in 0..10 {
            let vfa = VfaSpec::parse(shape).unwrap().he_init(spec.len(), &mut rng).unwrap();
            let s = random_state(&inst, &mut rng);
            let d = decide(&inst, &spec, Some(&vfa), &s, RHO, &DecisionOptions::default()).unwrap();
            assert!(inst.validate_action(&s, &d.action).is_empty());
            let v = action_value(&inst, &spec, Some(&vfa), &s, &d.action, RHO).unwrap();
            assert!((v - d.objective).abs() < 1e-6, "{shape}: {v} vs {}", d.objective);
        }
    }
}

#[test]
fn fixing_binaries_at_the_optimum_never_raises_it() {
    let inst = instance(4, 3);
    let spec = FeatureSpec::new(&inst.config, false);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let cfg = SolverConfig::default();
    let mut fixed_any = false;
    for _ in 0..10 {
        let vfa = VfaSpec::parse("nn:10,10").unwrap().he_init(spec.len(), &mut rng).unwrap();
        let s = random_state(&inst, &mut rng);
        let m = decision_model(&inst, &spec, Some(&vfa), &s, RHO, 1.0).unwrap();
        let r = solve_milp(&m.problem, &cfg).unwrap();
        assert!(check_solution(&m.problem, &r.values, (&cfg).into()).is_empty());
        for layer in &m.neurons {
            for b in layer.iter().filter_map(|n| n.indicator) {
                let mut p = m.problem.clone();
                p.fix(b, r.values[b].round());
                let q = solve_milp(&p, &cfg).unwrap();
                assert_eq!(q.status, SolveStatus::Optimal);
                assert!(q.objective <= r.objective + 1e-6);
                fixed_any = true;
            }
        }
    }
    assert!(fixed_any, "no unstable neuron in any sample");
}

fn pre_activations(net: &NeuralVfa, phi: &[f64]) -> Vec<Vec<f64>> {
    net.forward(phi).unwrap().pre
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_bounds_contain_every_sampled_point(seed in any::<u64>(), depth in 1usize..4) {
        let inst = instance(5, seed % 20);
        let spec = FeatureSpec::new(&inst.config, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = NeuralVfa::he_init(spec.len(), &vec![12; depth], &mut rng).unwrap();
        let s = random_state(&inst, &mut rng);
        let form = affine_form(&inst, &spec, &s);
        let fb = FeatureBounds::for_form(&spec, &form);
        let global = propagate_bounds(&net, &FeatureBounds::global(&spec)).unwrap();
        let loose = propagate_bounds(&net, &fb).unwrap();
        let tight = refine_bounds(&net, &spec, &form.layout.candidates, &fb).unwrap();
        for _ in 0..30 {
            let x = inst.random_action(&s, &mut rng);
            let pre = pre_activations(&net, &extract(&inst, &spec, &s, &x).unwrap());
            prop_assert!(global.contains(&pre, 1e-9));
            prop_assert!(loose.contains(&pre, 1e-9));
            prop_assert!(tight.contains(&pre, 1e-9));
        }
        // Refinement only ever shrinks the intervals.
        for (a, b) in loose.pre.iter().flatten().zip(tight.pre.iter().flatten()) {
            prop_assert!(b.0 >= a.0 - 1e-9 && b.1 <= a.1 + 1e-9);
        }
    }
}
