//! Brute-force ground truth for tiny instances: exhaustive action
//! enumeration, argmax by direct evaluation, and exact value iteration.
//!
//! Nothing here touches the decision model or the solver, so it can be used
//! to check them.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{extract, FeatureSpec};
use crate::mdp::{Action, ArrivalLaw, GraphLayout, Instance, InstanceConfig, JobType, RewardParams, State};
use crate::model::{decide, decision_model, DecisionOptions};
use crate::solver::solve_milp;
use crate::vfa::{Vfa, VfaSpec};

/// Upper limit on the number of candidate actions an enumeration may visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_actions: u128,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self { max_actions: 1_000_000 }
    }
}

/// Per job type, the counts an action may touch: `(job, choices, forced)`.
fn choices(s: &State) -> Vec<(JobType, u32, bool)> {
    let loc = s.location;
    let mut out = Vec::new();
    for (&j, k) in s.jobs() {
        if j.at != loc {
            continue;
        }
        if j.carried {
            out.push((j, k, j.dest == loc || j.due == 0));
        } else if j.due > 0 {
            out.push((j, k, false));
        }
    }
    out
}

/// Size of the box the enumeration walks: candidates times `(k + 1)` per
/// free job type. An upper bound on the number of feasible actions.
pub fn candidate_count(inst: &Instance, s: &State) -> u128 {
    let moves = inst.graph.candidates(s.location).len() as u128;
    choices(s)
        .iter()
        .filter(|c| !c.2)
        .fold(moves, |acc, c| acc.saturating_mul(c.1 as u128 + 1))
}

/// Every feasible action for `s`, each exactly once, in ascending order.
pub fn enumerate_actions(inst: &Instance, s: &State, budget: EnumerationBudget) -> Result<Vec<Action>> {
    if budget.max_actions == 0 {
        return Err(Error::InvalidConfig("enumeration budget must be positive".into()));
    }
    let required = candidate_count(inst, s);
    if required > budget.max_actions {
        return Err(Error::BudgetExceeded {
            required,
            budget: budget.max_actions,
        });
    }
    let opts = choices(s);
    let mut out = Vec::new();
    for next in inst.graph.candidates(s.location) {
        let mut counts: Vec<u32> = opts.iter().map(|&(_, k, forced)| if forced { k } else { 0 }).collect();
        loop {
            let mut x = Action::move_to(next);
            for (&(j, _, _), &c) in opts.iter().zip(&counts) {
                x = if j.carried { x.unload(j, c) } else { x.load(j, c) };
            }
            if inst.validate_action(s, &x).is_empty() {
                out.push(x);
            }
            // Odometer over the free counts.
            let mut i = 0;
            while i < opts.len() {
                let (_, k, forced) = opts[i];
                if !forced && counts[i] < k {
                    counts[i] += 1;
                    break;
                }
                if !forced {
                    counts[i] = 0;
                }
                i += 1;
            }
            if i == opts.len() {
                break;
            }
        }
    }
    out.sort();
    Ok(out)
}

/// `R(s, x) + rho * V(s, x)`, with `V = 0` when `vfa` is `None`.
pub fn action_value(inst: &Instance, spec: &FeatureSpec, vfa: Option<&Vfa>, s: &State, x: &Action, rho: f64) -> Result<f64> {
    let r = inst.reward(s, x)?;
    match vfa {
        Some(v) => Ok(r + rho * v.eval(&extract(inst, spec, s, x)?)?),
        None => Ok(r),
    }
}

/// Maximizer of `R + rho * V` by direct evaluation. Ties go to the smallest
/// action in the `Action` ordering.
pub fn brute_force_argmax(
    inst: &Instance,
    spec: &FeatureSpec,
    vfa: Option<&Vfa>,
    s: &State,
    rho: f64,
    budget: EnumerationBudget,
) -> Result<(Action, f64)> {
    let mut best: Option<(Action, f64)> = None;
    for x in enumerate_actions(inst, s, budget)? {
        let v = action_value(inst, spec, vfa, s, &x, rho)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("action value"));
        }
        // Actions arrive in ascending order, so strict improvement keeps the
        // smallest among ties.
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x, v));
        }
    }
    best.ok_or_else(|| Error::Solver("state has no feasible action".into()))
}

/// Optimal values of every state reachable from the initial distribution.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub states: Vec<State>,
    pub values: Vec<f64>,
    index: BTreeMap<State, usize>,
    /// Per state, per action: reward and successor distribution.
    model: Vec<Vec<(f64, Vec<(usize, f64)>)>>,
    rho: f64,
    pub sweeps: usize,
}

impl ValueTable {
    pub fn value(&self, s: &State) -> Option<f64> {
        self.index.get(s).map(|&i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// One application of the Bellman operator to `v`.
    pub fn bellman(&self, v: &[f64]) -> Vec<f64> {
        self.model
            .iter()
            .map(|acts| {
                acts.iter()
                    .map(|(r, succ)| r + self.rho * succ.iter().map(|&(j, p)| p * v[j]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// `max_s |T V(s) - V(s)|` for the stored values.
    pub fn residual(&self) -> f64 {
        self.bellman(&self.values)
            .iter()
            .zip(&self.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Value iteration over the reachable state space until the sup-norm change
/// of one sweep is at most `tol`.
pub fn exact_value_iteration(
    inst: &Instance,
    rho: f64,
    tol: f64,
    max_states: usize,
    budget: EnumerationBudget,
) -> Result<ValueTable> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidConfig("discount must lie in [0, 1)".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let mut index: BTreeMap<State, usize> = BTreeMap::new();
    let mut states = Vec::new();
    let mut queue = VecDeque::new();
    let push = |s: State, index: &mut BTreeMap<State, usize>, states: &mut Vec<State>, queue: &mut VecDeque<usize>| -> Result<usize> {
        if let Some(&i) = index.get(&s) {
            return Ok(i);
        }
        if states.len() >= max_states {
            return Err(Error::BudgetExceeded {
                required: states.len() as u128 + 1,
                budget: max_states as u128,
            });
        }
        let i = states.len();
        index.insert(s.clone(), i);
        states.push(s);
        queue.push_back(i);
        Ok(i)
    };
    for (s, _) in inst.initial_distribution() {
        push(s, &mut index, &mut states, &mut queue)?;
    }
    let mut model: Vec<Vec<(f64, Vec<(usize, f64)>)>> = Vec::new();
    while let Some(i) = queue.pop_front() {
        let s = states[i].clone();
        let mut acts = Vec::new();
        for x in enumerate_actions(inst, &s, budget)? {
            let r = inst.reward(&s, &x)?;
            let mut succ = Vec::new();
            for (t, p) in inst.transition_distribution(&s, &x)? {
                succ.push((push(t, &mut index, &mut states, &mut queue)?, p));
            }
            acts.push((r, succ));
        }
        if model.len() <= i {
            model.resize_with(i + 1, Vec::new);
        }
        model[i] = acts;
    }
    let mut table = ValueTable {
        values: vec![0.0; states.len()],
        states,
        index,
        model,
        rho,
        sweeps: 0,
    };
    loop {
        let next = table.bellman(&table.values);
        let change = next
            .iter()
            .zip(&table.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        table.values = next;
        table.sweeps += 1;
        if change <= tol {
            return Ok(table);
        }
    }
}

/// Three vertices, capacity 2, at most 2 waiting jobs per vertex.
pub fn tiny_instance() -> Result<Instance> {
    let cfg = InstanceConfig {
        vertices: 3,
        max_degree: 2,
        max_new_jobs: 2,
        accumulation_cap: 2,
        capacity: 2,
        min_due: 1,
        max_due: 3,
        discount: 0.9,
        seed: 1,
        arrivals: ArrivalLaw::Uniform,
        layout: GraphLayout::Random,
    };
    Instance::new(cfg, RewardParams::default())
}

/// A random valid state: waiting jobs up to the accumulation cap at every
/// vertex and carried jobs up to capacity, some of them forced.
pub fn random_state<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> State {
    let cfg = &inst.config;
    let n = cfg.vertices;
    let loc = rng.random_range(0..n);
    let mut s = State::empty(loc);
    for v in 0..n {
        let k = rng.random_range(0..=cfg.accumulation_cap.min(4));
        for _ in 0..k {
            let mut dest = rng.random_range(0..n - 1);
            if dest >= v {
                dest += 1;
            }
            s.add(JobType::waiting(v, dest, rng.random_range(0..=cfg.max_due)), 1);
        }
    }
    let k = rng.random_range(0..=cfg.capacity.min(4));
    for _ in 0..k {
        let dest = rng.random_range(0..n);
        s.add(JobType::carried(loc, dest, rng.random_range(0..=cfg.max_due)), 1);
    }
    s
}

/// Outcome of [`keystone_check`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KeystoneReport {
    pub checks: usize,
    pub failures: usize,
    pub max_gap: f64,
}

impl KeystoneReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checks > 0
    }

    fn record(&mut self, gap: Option<f64>, tol: f64) {
        self.checks += 1;
        match gap {
            Some(g) if g.is_finite() => {
                self.max_gap = self.max_gap.max(g);
                if g > tol {
                    self.failures += 1;
                }
            }
            _ => {
                self.failures += 1;
                self.max_gap = f64::INFINITY;
            }
        }
    }
}

/// MILP against enumeration on `states` random states. Per state and per
/// VFA (fresh He-initialized weights for each `specs` entry) two checks
/// run: the MILP optimum against the brute-force maximum, and the MILP with
/// a random feasible action fixed against `R + rho * V` at that action.
/// A solver error counts as a failure.
pub fn keystone_check(
    inst: &Instance,
    specs: &[VfaSpec],
    states: usize,
    seed: u64,
    opts: &DecisionOptions,
    tol: f64,
) -> Result<KeystoneReport> {
    let rho = inst.config.discount;
    let fspec = FeatureSpec::new(&inst.config, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = KeystoneReport::default();
    for _ in 0..states {
        let s = random_state(inst, &mut rng);
        for spec in specs {
            let vfa = spec.he_init(fspec.len(), &mut rng)?;
            let (_, best) = brute_force_argmax(inst, &fspec, Some(&vfa), &s, rho, EnumerationBudget::default())?;
            let milp = decide(inst, &fspec, Some(&vfa), &s, rho, opts).ok();
            rep.record(milp.map(|d| (d.objective - best).abs()), tol);

            let x = inst.random_action(&s, &mut rng);
            let want = action_value(inst, &fspec, Some(&vfa), &s, &x, rho)?;
            let fixed = decision_model(inst, &fspec, Some(&vfa), &s, rho, opts.big_m_scale).and_then(|mut m| {
                m.fix_action(&x)?;
                solve_milp(&m.problem, &opts.solver)
            });
            let gap = match fixed {
                Ok(r) if r.is_optimal() => Some((r.objective - want).abs()),
                _ => None,
            };
            rep.record(gap, tol);
        }
    }
    Ok(rep)
}
