//! Flat experiment configuration: one `key = value` per line, `#` comments.
//!
//! `instance.preset` (default, shuttle or tiny) picks the starting instance;
//! the other keys are grouped by prefix: `instance.*`, `reward.*`, `vfa.*`,
//! `trainer.*`, `solver.*` and `grid.*`. Anything not given keeps its
//! default. [`ExperimentConfig::to_text`] writes every key, and parsing that
//! text gives back the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mdp::{ArrivalLaw, GraphLayout, Instance, InstanceConfig, RewardParams};
use crate::solver::Branching;
use crate::trainer::{DecisionRule, GridSpec, TrainerConfig};
use crate::vfa::VfaSpec;

/// Every recognized key, in the order [`ExperimentConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "instance.preset",
    "instance.vertices",
    "instance.max_degree",
    "instance.max_new_jobs",
    "instance.accumulation_cap",
    "instance.capacity",
    "instance.min_due",
    "instance.max_due",
    "instance.seed",
    "instance.arrivals",
    "instance.layout",
    "reward.delivery",
    "reward.distance",
    "reward.travel",
    "reward.handling",
    "reward.penalty",
    "vfa.kind",
    "vfa.next_hop",
    "trainer.iterations",
    "trainer.eta",
    "trainer.discount",
    "trainer.eval_interval",
    "trainer.eval_length",
    "trainer.seed",
    "trainer.eval_seed",
    "trainer.epsilon",
    "trainer.reset_interval",
    "trainer.divergence_ceiling",
    "trainer.decision",
    "solver.feasibility_tol",
    "solver.integrality_tol",
    "solver.node_limit",
    "solver.branching",
    "solver.stall_threshold",
    "solver.big_m_scale",
    "grid.vfas",
    "grid.etas",
    "grid.seeds",
    "grid.baseline",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    pub rewards: RewardParams,
    pub trainer: TrainerConfig,
    pub grid: Option<GridSpec>,
}


fn invalid(key: &str, raw: &str) -> Error {
    Error::InvalidConfig(format!("key `{key}`: cannot parse `{raw}`"))
}

fn num<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| invalid(key, raw))
}

fn list<T: FromStr>(key: &str, raw: &str, sep: char) -> Result<Vec<T>> {
    raw.split(sep)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| num(key, t))
        .collect()
}

fn boolean(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, raw)),
    }
}

fn vfa_token(v: &VfaSpec) -> String {
    match v {
        VfaSpec::Poly => "pl".into(),
        VfaSpec::Neural { hidden } => format!(
            "nn:{}",
            hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
        ),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::InvalidConfig(format!("unknown key `{k}` (line {})", i + 1)));
            }
            if values.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(Error::InvalidConfig(format!("key `{k}` given twice (line {})", i + 1)));
            }
        }
        let mut c = ExperimentConfig::default();
        if let Some((_, preset)) = values.get("instance.preset") {
            c.instance = match preset.as_str() {
                "default" => InstanceConfig::default(),
                "shuttle" => Instance::shuttle(RewardParams::default())?.config,
                "tiny" => crate::oracle::tiny_instance()?.config,
                _ => return Err(invalid("instance.preset", preset)),
            };
        }
        let mut grid_keys = false;
        for (k, (_, raw)) in &values {
            let (k, raw) = (k.as_str(), raw.as_str());
            let ic = &mut c.instance;
            let r = &mut c.rewards;
            let t = &mut c.trainer;
            match k {
                "instance.preset" => {}
                "instance.vertices" => ic.vertices = num(k, raw)?,
                "instance.max_degree" => ic.max_degree = num(k, raw)?,
                "instance.max_new_jobs" => ic.max_new_jobs = num(k, raw)?,
                "instance.accumulation_cap" => ic.accumulation_cap = num(k, raw)?,
                "instance.capacity" => ic.capacity = num(k, raw)?,
                "instance.min_due" => ic.min_due = num(k, raw)?,
                "instance.max_due" => ic.max_due = num(k, raw)?,
                "instance.seed" => ic.seed = num(k, raw)?,
                "instance.arrivals" => {
                    ic.arrivals = match raw {
                        "uniform" => ArrivalLaw::Uniform,
                        "fixed" => ArrivalLaw::Fixed,
                        _ => return Err(invalid(k, raw)),
                    }
                }
                "instance.layout" => {
                    ic.layout = match raw {
                        "random" => GraphLayout::Random,
                        "line" => GraphLayout::Line,
                        _ => return Err(invalid(k, raw)),
                    }
                }
                "reward.delivery" => r.delivery = num(k, raw)?,
                "reward.distance" => r.distance = num(k, raw)?,
                "reward.travel" => r.travel = num(k, raw)?,
                "reward.handling" => r.handling = num(k, raw)?,
                "reward.penalty" => r.penalty = num(k, raw)?,
                "vfa.kind" => t.vfa = VfaSpec::parse(raw).map_err(|_| invalid(k, raw))?,
                "vfa.next_hop" => t.next_hop = boolean(k, raw)?,
                "trainer.iterations" => t.iterations = num(k, raw)?,
                "trainer.eta" => t.eta = num(k, raw)?,
                "trainer.discount" => t.discount = num(k, raw)?,
                "trainer.eval_interval" => t.eval_interval = num(k, raw)?,
                "trainer.eval_length" => t.eval_length = num(k, raw)?,
                "trainer.seed" => t.train_seed = num(k, raw)?,
                "trainer.eval_seed" => t.eval_seed = num(k, raw)?,
                "trainer.epsilon" => t.epsilon = num(k, raw)?,
                "trainer.reset_interval" => t.reset_interval = num(k, raw)?,
                "trainer.divergence_ceiling" => t.divergence_ceiling = num(k, raw)?,
                "trainer.decision" => {
                    t.rule = match raw {
                        "milp" => DecisionRule::Milp,
                        "enumeration" => DecisionRule::Enumeration,
                        _ => return Err(invalid(k, raw)),
                    }
                }
                "solver.feasibility_tol" => t.decision.solver.feasibility_tol = num(k, raw)?,
                "solver.integrality_tol" => t.decision.solver.integrality_tol = num(k, raw)?,
                "solver.node_limit" => t.decision.solver.node_limit = num(k, raw)?,
                "solver.branching" => {
                    t.decision.solver.branching = match raw {
                        "most_fractional" => Branching::MostFractional,
                        "pseudo_cost" => Branching::PseudoCost,
                        _ => return Err(invalid(k, raw)),
                    }
                }
                "solver.stall_threshold" => t.decision.solver.stall_threshold = num(k, raw)?,
                "solver.big_m_scale" => t.decision.big_m_scale = num(k, raw)?,
                _ => grid_keys = true,
            }
        }
        c.instance.discount = c.trainer.discount;
        if grid_keys {
            let get = |k: &str| values.get(k).map(|(_, v)| v.as_str());
            let vfas = match get("grid.vfas") {
                Some(raw) => raw
                    .split(';')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| VfaSpec::parse(t).map_err(|_| invalid("grid.vfas", raw)))
                    .collect::<Result<Vec<_>>>()?,
                None => vec![c.trainer.vfa.clone()],
            };
            let etas = match get("grid.etas") {
                Some(raw) => list("grid.etas", raw, ',')?,
                None => vec![c.trainer.eta],
            };
            let seeds = match get("grid.seeds") {
                Some(raw) => list("grid.seeds", raw, ',')?,
                None => vec![c.trainer.train_seed],
            };
            let baseline = match get("grid.baseline") {
                Some(raw) => VfaSpec::parse(raw).map(|v| v.label()).unwrap_or_else(|_| raw.to_string()),
                None => vfas[0].label(),
            };
            for &eta in &etas {
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(Error::InvalidConfig("eta out of (0,1]".into()));
                }
            }
            c.grid = Some(GridSpec {
                vfas,
                etas,
                seeds,
                baseline,
            });
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        self.rewards.validate()?;
        self.trainer.validate()?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    pub fn build_instance(&self) -> Result<Instance> {
        Instance::new(self.instance.clone(), self.rewards)
    }

    /// Every key with its effective value.
    pub fn to_text(&self) -> String {
        let ic = &self.instance;
        let r = &self.rewards;
        let t = &self.trainer;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("instance.vertices", ic.vertices.to_string());
        kv("instance.max_degree", ic.max_degree.to_string());
        kv("instance.max_new_jobs", ic.max_new_jobs.to_string());
        kv("instance.accumulation_cap", ic.accumulation_cap.to_string());
        kv("instance.capacity", ic.capacity.to_string());
        kv("instance.min_due", ic.min_due.to_string());
        kv("instance.max_due", ic.max_due.to_string());
        kv("instance.seed", ic.seed.to_string());
        kv(
            "instance.arrivals",
            match ic.arrivals {
                ArrivalLaw::Uniform => "uniform",
                ArrivalLaw::Fixed => "fixed",
            }
            .into(),
        );
        kv(
            "instance.layout",
            match ic.layout {
                GraphLayout::Random => "random",
                GraphLayout::Line => "line",
            }
            .into(),
        );
        kv("reward.delivery", format!("{:?}", r.delivery));
        kv("reward.distance", format!("{:?}", r.distance));
        kv("reward.travel", format!("{:?}", r.travel));
        kv("reward.handling", format!("{:?}", r.handling));
        kv("reward.penalty", format!("{:?}", r.penalty));
        kv("vfa.kind", vfa_token(&t.vfa));
        kv("vfa.next_hop", t.next_hop.to_string());
        kv("trainer.iterations", t.iterations.to_string());
        kv("trainer.eta", format!("{:?}", t.eta));
        kv("trainer.discount", format!("{:?}", t.discount));
        kv("trainer.eval_interval", t.eval_interval.to_string());
        kv("trainer.eval_length", t.eval_length.to_string());
        kv("trainer.seed", t.train_seed.to_string());
        kv("trainer.eval_seed", t.eval_seed.to_string());
        kv("trainer.epsilon", format!("{:?}", t.epsilon));
        kv("trainer.reset_interval", t.reset_interval.to_string());
        kv("trainer.divergence_ceiling", format!("{:?}", t.divergence_ceiling));
        kv(
            "trainer.decision",
            match t.rule {
                DecisionRule::Milp => "milp",
                DecisionRule::Enumeration => "enumeration",
            }
            .into(),
        );
        let sc = &t.decision.solver;
        kv("solver.feasibility_tol", format!("{:?}", sc.feasibility_tol));
        kv("solver.integrality_tol", format!("{:?}", sc.integrality_tol));
        kv("solver.node_limit", sc.node_limit.to_string());
        kv(
            "solver.branching",
            match sc.branching {
                Branching::MostFractional => "most_fractional",
                Branching::PseudoCost => "pseudo_cost",
            }
            .into(),
        );
        kv("solver.stall_threshold", sc.stall_threshold.to_string());
        kv("solver.big_m_scale", format!("{:?}", t.decision.big_m_scale));
        if let Some(g) = &self.grid {
            kv("grid.vfas", g.vfas.iter().map(vfa_token).collect::<Vec<_>>().join("; "));
            kv("grid.etas", g.etas.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>().join(", "));
            kv("grid.seeds", g.seeds.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", "));
            kv("grid.baseline", g.baseline.clone());
        }
        s
    }
}
