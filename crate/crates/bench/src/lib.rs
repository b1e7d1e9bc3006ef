//! Fixtures shared by the criterion benchmarks.

use adp_core::features::FeatureSpec;
use adp_core::oracle::random_state;
use adp_core::{Instance, InstanceConfig, RewardParams, State, Vfa, VfaSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A |V|=4 instance, He-initialized weights of the given shape and a batch
/// of random states to decide on.
pub struct Fixture {
    pub inst: Instance,
    pub spec: FeatureSpec,
    pub vfa: Vfa,
    pub states: Vec<State>,
}

pub fn fixture(shape: &VfaSpec, states: usize, seed: u64) -> Fixture {
    let cfg = InstanceConfig {
        vertices: 4,
        ..InstanceConfig::default()
    };
    let inst = Instance::new(cfg, RewardParams::default()).expect("valid instance");
    let spec = FeatureSpec::new(&inst.config, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vfa = shape.he_init(spec.len(), &mut rng).expect("valid shape");
    let states = (0..states).map(|_| random_state(&inst, &mut rng)).collect();
    Fixture { inst, spec, vfa, states }
}
