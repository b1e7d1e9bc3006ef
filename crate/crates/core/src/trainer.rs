//! The learn-act loop, offline policy evaluation, divergence monitoring and
//! experiment grids.
//!
//! One training run follows a single trajectory. At each epoch the greedy
//! action for the current state is found (MILP or, on tiny instances,
//! enumeration), its value `v_hat = R + rho * V(S, x)` is observed, and the
//! approximation is moved toward `v_hat` at the features of the previous
//! state-action pair. The first epoch has no predecessor and skips the update.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{extract, FeatureSpec, FeatureVector};
use crate::mdp::{Action, Instance, State};
use crate::model::{decide, decision_model, DecisionModel, DecisionOptions};
use crate::oracle::{brute_force_argmax, EnumerationBudget};
use crate::vfa::{Vfa, VfaSpec};

/// How each epoch's argmax is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionRule {
    Milp,
    /// Exhaustive enumeration; tiny instances only.
    Enumeration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub iterations: usize,
    pub eta: f64,
    pub discount: f64,
    /// Offline evaluation every this many iterations; 0 disables it.
    pub eval_interval: usize,
    pub eval_length: usize,
    pub vfa: VfaSpec,
    /// Adds the next-hop feature group.
    pub next_hop: bool,
    pub train_seed: u64,
    pub eval_seed: u64,
    /// Probability of replacing the greedy action by a random feasible one.
    pub epsilon: f64,
    /// Restart from a fresh initial state every this many iterations; 0 never.
    pub reset_interval: usize,
    pub divergence_ceiling: f64,
    pub rule: DecisionRule,
    pub decision: DecisionOptions,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            eta: 0.01,
            discount: 0.9,
            eval_interval: 10_000,
            eval_length: 10_000,
            vfa: VfaSpec::Poly,
            next_hop: false,
            train_seed: 1,
            eval_seed: 2,
            epsilon: 0.0,
            reset_interval: 0,
            divergence_ceiling: 1e6,
            rule: DecisionRule::Milp,
            decision: DecisionOptions::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("trainer.iterations must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta out of (0,1]");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("trainer.discount out of [0,1)");
        }
        if self.eval_interval > 0 && self.eval_length == 0 {
            return bad("trainer.eval_length must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("trainer.epsilon out of [0,1]");
        }
        if !(self.divergence_ceiling > 0.0) {
            return bad("trainer.divergence_ceiling must be positive");
        }
        if !(self.decision.big_m_scale > 0.0 && self.decision.big_m_scale.is_finite()) {
            return bad("solver.big_m_scale must be positive");
        }
        self.decision.solver.validate()
    }
}

/// The argmax of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: Action,
    pub objective: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub seconds: f64,
}

/// Greedy action for `s` under `vfa` with the configured rule.
pub fn choose(inst: &Instance, spec: &FeatureSpec, vfa: &Vfa, s: &State, cfg: &TrainerConfig) -> Result<Choice> {
    match cfg.rule {
        DecisionRule::Milp => {
            let d = decide(inst, spec, Some(vfa), s, cfg.discount, &cfg.decision)?;
            Ok(Choice {
                action: d.action,
                objective: d.objective,
                nodes: d.nodes,
                lp_iterations: d.lp_iterations,
                seconds: d.seconds,
            })
        }
        DecisionRule::Enumeration => {
            let t = Instant::now();
            let (action, objective) =
                brute_force_argmax(inst, spec, Some(vfa), s, cfg.discount, EnumerationBudget::default())?;
            Ok(Choice {
                action,
                objective,
                nodes: 0,
                lp_iterations: 0,
                seconds: t.elapsed().as_secs_f64(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Direct reward `R(S_n, x_n)` of the action taken.
    pub reward: f64,
    /// Observed value at the greedy action, evaluated directly.
    pub value_hat: f64,
    /// Optimal objective reported by the decision rule.
    pub objective: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
    pub checkpoints: Vec<Checkpoint>,
    /// Iteration at which training halted on divergence.
    pub diverged_at: Option<usize>,
}

impl TrainingLog {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn value_hats(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value_hat).collect()
    }

    pub fn mean_solve_seconds(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.seconds).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_nodes(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.nodes as f64).sum::<f64>() / self.records.len() as f64
    }
}

/// Frozen weights tied to the instance they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub vfa: Vfa,
    pub spec: FeatureSpec,
    pub fingerprint: String,
    pub iteration: usize,
}

impl PolicySnapshot {
    pub fn new(inst: &Instance, spec: FeatureSpec, vfa: Vfa, iteration: usize) -> Self {
        Self {
            vfa,
            spec,
            fingerprint: inst.fingerprint(),
            iteration,
        }
    }

    /// A weight file whose `#` header carries the fingerprint and the feature
    /// manifest; [`Vfa::from_text`] reads it unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# policy-snapshot v1");
        let _ = writeln!(s, "# fingerprint {}", self.fingerprint);
        let _ = writeln!(s, "# iteration {}", self.iteration);
        for line in self.spec.manifest().lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str(&self.vfa.to_text());
        s
    }

    /// Reads a snapshot. Plain weight files without a fingerprint are
    /// accepted and bound to `inst`.
    pub fn from_text(text: &str, inst: &Instance, spec: FeatureSpec) -> Result<Self> {
        let vfa = Vfa::from_text(text, Some(spec.len()))?;
        let mut fingerprint = inst.fingerprint();
        let mut iteration = 0;
        for line in text.lines().map(str::trim) {
            if let Some(f) = line.strip_prefix("# fingerprint ") {
                fingerprint = f.trim().to_string();
            } else if let Some(i) = line.strip_prefix("# iteration ") {
                iteration = i.trim().parse().map_err(|_| Error::parse(0, "bad snapshot iteration"))?;
            }
        }
        Ok(Self {
            vfa,
            spec,
            fingerprint,
            iteration,
        })
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Final weights; the last finite ones if training diverged.
    pub vfa: Vfa,
    pub log: TrainingLog,
    /// Weights frozen at each evaluation checkpoint.
    pub snapshots: Vec<PolicySnapshot>,
}

/// Index of the first non-finite value or value beyond `ceiling` in magnitude.
pub fn detect_divergence(window: &[f64], ceiling: f64) -> Option<usize> {
    window.iter().position(|v| !v.is_finite() || v.abs() > ceiling)
}

/// The decision model of the first epoch of [`train`]: same initial weights,
/// same initial state.
pub fn first_decision_model(inst: &Instance, cfg: &TrainerConfig) -> Result<DecisionModel> {
    let spec = FeatureSpec::new(&inst.config, cfg.next_hop);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let vfa = cfg.vfa.he_init(spec.len(), &mut rng)?;
    let s = inst.initial_state(&mut rng);
    decision_model(inst, &spec, Some(&vfa), &s, cfg.discount, cfg.decision.big_m_scale)
}

/// Runs the learn-act loop on `inst`.
pub fn train(inst: &Instance, cfg: &TrainerConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let spec = FeatureSpec::new(&inst.config, cfg.next_hop);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let mut vfa = cfg.vfa.he_init(spec.len(), &mut rng)?;
    let mut s = inst.initial_state(&mut rng);
    let mut prev: Option<FeatureVector> = None;
    let mut log = TrainingLog::default();
    let mut snapshots = Vec::new();
    for n in 1..=cfg.iterations {
        if cfg.reset_interval > 0 && n > 1 && (n - 1) % cfg.reset_interval == 0 {
            s = inst.initial_state(&mut rng);
            prev = None;
        }
        let c = choose(inst, &spec, &vfa, &s, cfg)?;
        let phi = extract(inst, &spec, &s, &c.action)?;
        let value_hat = inst.reward(&s, &c.action)? + cfg.discount * vfa.eval(&phi)?;
        let taken = if cfg.epsilon > 0.0 && rng.random::<f64>() < cfg.epsilon {
            inst.random_action(&s, &mut rng)
        } else {
            c.action.clone()
        };
        let record = IterationRecord {
            iteration: n,
            reward: inst.reward(&s, &taken)?,
            value_hat,
            objective: c.objective,
            nodes: c.nodes,
            lp_iterations: c.lp_iterations,
            seconds: c.seconds,
        };
        if detect_divergence(&[value_hat], cfg.divergence_ceiling).is_some() {
            log.records.push(record);
            log.diverged_at = Some(n);
            break;
        }
        if let Some(p) = &prev {
            // A blown-up prediction at the updated point counts as divergence
            // before it can reach the solver.
            let updated = vfa
                .update(p, value_hat, cfg.eta)
                .and_then(|next| next.eval(p).map(|v| (next, v)));
            match updated {
                Ok((next, v)) if next.is_finite() && detect_divergence(&[v], cfg.divergence_ceiling).is_none() => {
                    vfa = next
                }
                Ok(_) | Err(Error::NonFinite(_)) => {
                    log.records.push(record);
                    log.diverged_at = Some(n);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        log.records.push(record);
        prev = Some(if taken == c.action {
            phi
        } else {
            extract(inst, &spec, &s, &taken)?
        });
        s = inst.transition(&s, &taken, &mut rng)?;
        if cfg.eval_interval > 0 && n % cfg.eval_interval == 0 {
            let snap = PolicySnapshot::new(inst, spec, vfa.clone(), n);
            let (mean, std_dev) = evaluate_offline(inst, &snap, cfg.eval_length, cfg.eval_seed, cfg)?;
            log.checkpoints.push(Checkpoint {
                iteration: n,
                mean,
                std_dev,
            });
            snapshots.push(snap);
        }
    }
    Ok(TrainOutput { vfa, log, snapshots })
}

/// Mean and sample standard deviation of the per-epoch direct reward of the
/// greedy policy under frozen weights.
pub fn evaluate_offline(
    inst: &Instance,
    snap: &PolicySnapshot,
    length: usize,
    seed: u64,
    cfg: &TrainerConfig,
) -> Result<(f64, f64)> {
    if snap.fingerprint != inst.fingerprint() {
        return Err(Error::Fingerprint {
            snapshot: snap.fingerprint.clone(),
            instance: inst.fingerprint(),
        });
    }
    if length == 0 {
        return Err(Error::InvalidConfig("evaluation length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = inst.initial_state(&mut rng);
    let mut rewards = Vec::with_capacity(length);
    for _ in 0..length {
        let c = choose(inst, &snap.spec, &snap.vfa, &s, cfg)?;
        rewards.push(inst.reward(&s, &c.action)?);
        s = inst.transition(&s, &c.action, &mut rng)?;
    }
    Ok(mean_std(&rewards))
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Cartesian product of VFA shapes, learning rates and replication seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub vfas: Vec<VfaSpec>,
    pub etas: Vec<f64>,
    /// Training seeds, one replication each.
    pub seeds: Vec<u64>,
    /// Label of the VFA that normalization divides by, e.g. `PL`.
    pub baseline: String,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vfas.is_empty() || self.etas.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one vfa, eta and seed".into()));
        }
        if !self.vfas.iter().any(|v| v.label() == self.baseline) {
            return Err(Error::InvalidConfig(format!(
                "grid.baseline `{}` is not among grid.vfas",
                self.baseline
            )));
        }
        Ok(())
    }
}

/// One `(cell, seed, checkpoint)` line of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub vfa: String,
    pub eta: f64,
    pub seed: u64,
    pub iteration: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub mean_solve_seconds: f64,
    pub mean_nodes: f64,
    pub diverged: bool,
    /// `mean` over the baseline's seed-averaged mean at the same eta and
    /// checkpoint.
    pub normalized: f64,
    pub error: Option<String>,
}

/// Worker threads for grid runs: `ADP_THREADS` if set, else rayon's default.
pub fn grid_threads() -> Option<usize> {
    std::env::var("ADP_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// Runs every cell of `grid` with `base` supplying all other settings.
/// Failures become flagged rows; the grid itself never aborts.
pub fn run_grid(inst: &Instance, base: &TrainerConfig, grid: &GridSpec) -> Result<Vec<GridRow>> {
    grid.validate()?;
    let mut jobs = Vec::new();
    for v in &grid.vfas {
        for &eta in &grid.etas {
            for &seed in &grid.seeds {
                jobs.push((v.clone(), eta, seed));
            }
        }
    }
    let run = |(v, eta, seed): &(VfaSpec, f64, u64)| -> Vec<GridRow> {
        let cfg = TrainerConfig {
            vfa: v.clone(),
            eta: *eta,
            train_seed: *seed,
            ..base.clone()
        };
        let row = |iteration, mean, std_dev, log: Option<&TrainingLog>, error: Option<String>| GridRow {
            vfa: v.label(),
            eta: *eta,
            seed: *seed,
            iteration,
            mean,
            std_dev,
            mean_solve_seconds: log.map_or(f64::NAN, TrainingLog::mean_solve_seconds),
            mean_nodes: log.map_or(f64::NAN, TrainingLog::mean_nodes),
            diverged: log.is_some_and(TrainingLog::diverged),
            normalized: f64::NAN,
            error,
        };
        match train(inst, &cfg) {
            Ok(out) => {
                let mut rows: Vec<GridRow> = out
                    .log
                    .checkpoints
                    .iter()
                    .map(|c| row(c.iteration, c.mean, c.std_dev, Some(&out.log), None))
                    .collect();
                if let Some(n) = out.log.diverged_at {
                    rows.push(row(n, f64::NAN, f64::NAN, Some(&out.log), Some("diverged".into())));
                }
                rows
            }
            Err(e) => vec![row(0, f64::NAN, f64::NAN, None, Some(e.to_string()))],
        }
    };
    let mut rows: Vec<GridRow> = match grid_threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("ADP_THREADS: {e}")))?
            .install(|| jobs.par_iter().flat_map(run).collect()),
        None => jobs.par_iter().flat_map(run).collect(),
    };
    rows.sort_by(|a, b| {
        let key = |r: &GridRow| {
            (
                grid.vfas.iter().position(|v| v.label() == r.vfa),
                grid.etas.iter().position(|&e| e == r.eta),
                grid.seeds.iter().position(|&s| s == r.seed),
                r.iteration,
            )
        };
        key(a).cmp(&key(b))
    });
    normalize(&mut rows, &grid.baseline);
    Ok(rows)
}

fn normalize(rows: &mut [GridRow], baseline: &str) {
    let base: Vec<(f64, usize, f64)> = rows
        .iter()
        .filter(|r| r.vfa == baseline && r.error.is_none())
        .map(|r| (r.eta, r.iteration, r.mean))
        .collect();
    for r in rows.iter_mut() {
        let matching: Vec<f64> = base
            .iter()
            .filter(|b| b.0 == r.eta && b.1 == r.iteration)
            .map(|b| b.2)
            .collect();
        if !matching.is_empty() {
            let m = matching.iter().sum::<f64>() / matching.len() as f64;
            r.normalized = r.mean / m;
        }
    }
}

/// Formats with 9 significant digits in plain decimal notation.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.99999999e2 -> 1000.000000).
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded != 0.0 && rounded.abs().log10().floor() as i32 > magnitude && decimals > 0 {
        let d = decimals - 1;
        return format!("{x:.d$}");
    }
    s
}

pub const TRAINING_LOG_SCHEMA: &str = "# schema training_log v1";
pub const TIMING_SCHEMA: &str = "# schema timing v1";
pub const GRID_SCHEMA: &str = "# schema grid_results v1";

/// Per-iteration log. Wall-clock times live in [`timing_csv`] so that
/// reruns of one configuration produce identical bytes here.
pub fn training_log_csv(log: &TrainingLog) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{TRAINING_LOG_SCHEMA}");
    let _ = writeln!(
        s,
        "iteration,reward,value_hat,objective,nodes,lp_iterations,eval_mean,eval_std,diverged"
    );
    for r in &log.records {
        let cp = log.checkpoints.iter().find(|c| c.iteration == r.iteration);
        let (m, d) = cp.map_or((String::new(), String::new()), |c| (fmt_sig(c.mean), fmt_sig(c.std_dev)));
        let diverged = u8::from(log.diverged_at == Some(r.iteration));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{m},{d},{diverged}",
            r.iteration,
            fmt_sig(r.reward),
            fmt_sig(r.value_hat),
            fmt_sig(r.objective),
            r.nodes,
            r.lp_iterations,
        );
    }
    s
}

pub fn timing_csv(log: &TrainingLog) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{TIMING_SCHEMA}");
    let _ = writeln!(s, "iteration,solve_seconds");
    for r in &log.records {
        let _ = writeln!(s, "{},{}", r.iteration, fmt_sig(r.seconds));
    }
    s
}

/// Quotes fields that contain a comma or quote, e.g. `NN(1,20)`.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{GRID_SCHEMA}");
    let _ = writeln!(
        s,
        "vfa,eta,seed,iteration,mean_reward,std_reward,normalized,mean_solve_seconds,mean_nodes,diverged,error"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.vfa),
            fmt_sig(r.eta),
            r.seed,
            r.iteration,
            fmt_sig(r.mean),
            fmt_sig(r.std_dev),
            fmt_sig(r.normalized),
            fmt_sig(r.mean_solve_seconds),
            fmt_sig(r.mean_nodes),
            u8::from(r.diverged),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    s
}
