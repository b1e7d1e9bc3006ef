//! Best-first branch-and-bound over the simplex relaxation.
//!
//! Children warm-start from their parent's final tableau (shared until the
//! first child takes it). Once too many tableaux are held by open nodes, new
//! children fall back to the root tableau with their full bound path applied.
//! Every node first tightens its bounds by propagation over the rows; the
//! tightened integer bounds go to the relaxation.
//! Candidate incumbents are polished by fixing every integer variable to its
//! rounded value and re-solving, so reported integer values are exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::Instant;

use super::propagate;
use super::simplex::{LpOutcome, Tableau};
use super::{check_solution, Branching, LpProblem, SolveResult, SolveStatus, SolverConfig};
use crate::error::{Error, Result};

/// Tableau entries (f64) that open nodes may hold in total.
const STORED_ENTRIES: usize = 64 << 20 >> 3;

struct Node {
    bound: f64,
    id: usize,
    /// `(variable, lower, upper)` from the root, applied in order.
    path: Vec<(usize, f64, f64)>,
    warm: Option<Arc<Tableau>>,
    /// Branching variable, direction (true = up) and parent LP value, for pseudo-costs.
    origin: Option<(usize, bool, f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // Highest bound first; older nodes first among ties.
    fn cmp(&self, o: &Self) -> Ordering {
        self.bound.total_cmp(&o.bound).then_with(|| o.id.cmp(&self.id))
    }
}

#[derive(Default, Clone, Copy)]
struct PseudoCost {
    sum: [f64; 2],
    count: [u32; 2],
}

/// Solves `p` with integrality enforced on integer and binary variables.
pub fn solve_milp(p: &LpProblem, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    p.validate()?;
    let start = Instant::now();
    let n = p.num_vars();
    let mut lp_iterations = 0;
    let fail = |nodes, lp_iterations, status| SolveResult {
        status,
        objective: f64::NEG_INFINITY,
        values: Vec::new(),
        nodes,
        lp_iterations,
        root_bound: f64::NEG_INFINITY,
        wall_time: start.elapsed(),
    };
    let (mut root_lo, mut root_hi) = (p.lower.clone(), p.upper.clone());
    for j in (0..n).filter(|&j| p.kinds[j].is_integral()) {
        root_lo[j] = root_lo[j].ceil();
        root_hi[j] = root_hi[j].floor();
    }
    if (0..n).any(|j| root_lo[j] > root_hi[j]) || !propagate::tighten(p, &mut root_lo, &mut root_hi, cfg.integrality_tol) {
        return Ok(fail(0, 0, SolveStatus::Infeasible));
    }
    let mut root_tab = Tableau::new(p)?;
    for j in 0..n {
        let (l, u) = lp_bounds(p, &root_lo, &root_hi, j);
        root_tab.set_bounds(j, l, u);
    }
    let outcome = root_tab.solve(cfg)?;
    lp_iterations += root_tab.iterations;
    match outcome {
        LpOutcome::Infeasible => return Ok(fail(1, lp_iterations, SolveStatus::Infeasible)),
        LpOutcome::Unbounded => {
            return Ok(SolveResult {
                objective: f64::INFINITY,
                ..fail(1, lp_iterations, SolveStatus::Unbounded)
            })
        }
        LpOutcome::Optimal => {}
    }
    let root_bound = root_tab.objective() + p.offset;
    let root = Arc::new(root_tab);

    let int_vars: Vec<usize> = (0..n).filter(|&j| p.kinds[j].is_integral()).collect();
    let mut pseudo = vec![PseudoCost::default(); n];
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut stored = 0usize;
    let mut nodes = 0usize;
    heap.push(Node {
        bound: root_bound,
        id: 0,
        path: Vec::new(),
        warm: None,
        origin: None,
    });
    next_id += 1;

    while let Some(mut node) = heap.pop() {
        let warm = node.warm.take();
        if let Some(w) = &warm {
            if Arc::strong_count(w) == 1 {
                stored -= w.size();
            }
        }
        if let Some((best, _)) = &incumbent {
            if node.bound <= best + prune_gap(*best) {
                continue;
            }
        }
        if nodes >= cfg.node_limit {
            heap.push(node);
            break;
        }
        nodes += 1;
        let (mut lo, mut hi) = (root_lo.clone(), root_hi.clone());
        for &(j, l, u) in &node.path {
            lo[j] = l;
            hi[j] = u;
        }
        if !propagate::tighten(p, &mut lo, &mut hi, cfg.integrality_tol) {
            continue;
        }
        let mut tab = match warm {
            Some(w) => Arc::try_unwrap(w).unwrap_or_else(|w| (*w).clone()),
            None => (*root).clone(),
        };
        for j in 0..n {
            let (l, u) = lp_bounds(p, &lo, &hi, j);
            if tab.lo[j] != l || tab.hi[j] != u {
                tab.set_bounds(j, l, u);
            }
        }
        tab.iterations = 0;
        let outcome = tab.solve(cfg)?;
        lp_iterations += tab.iterations;
        if outcome != LpOutcome::Optimal {
            continue;
        }
        let obj = tab.objective() + p.offset;
        if let Some((var, up, frac, parent)) = node.origin {
            let pc = &mut pseudo[var];
            let k = usize::from(up);
            pc.sum[k] += (parent - obj).max(0.0) / frac.max(1e-9);
            pc.count[k] += 1;
        }
        if let Some((best, _)) = &incumbent {
            if obj <= best + prune_gap(*best) {
                continue;
            }
        }
        let x = tab.structural().to_vec();
        let branch = match select_branch(p, cfg, &int_vars, &x, &lo, &hi, &pseudo) {
            Some(b) => Some(b),
            None => {
                // Integral within tolerance: polish to exact integers.
                match polish(p, cfg, &tab, &int_vars, &mut lp_iterations)? {
                    Some((v, vals)) => {
                        if incumbent.as_ref().is_none_or(|(b, _)| v > *b) {
                            incumbent = Some((v, vals));
                        }
                        None
                    }
                    None => int_vars
                        .iter()
                        .copied()
                        .filter(|&j| x[j] != x[j].round())
                        .max_by(|&a, &b| frac_dist(x[a]).total_cmp(&frac_dist(x[b])).then(b.cmp(&a)))
                        .map(|j| (j, x[j])),
                }
            }
        };
        let Some((j, split)) = branch else { continue };
        // Children: x_j <= floor(split) and x_j >= floor(split) + 1.
        let down = split.floor();
        let children: Vec<(bool, f64, f64)> = [(false, lo[j], down), (true, down + 1.0, hi[j])]
            .into_iter()
            .filter(|&(_, l, u)| l <= u)
            .collect();
        let shared = if !children.is_empty() && stored + tab.size() <= STORED_ENTRIES {
            stored += tab.size();
            Some(Arc::new(tab))
        } else {
            None
        };
        for (up, l, u) in children {
            let mut path = node.path.clone();
            path.push((j, l, u));
            let frac = if up { down + 1.0 - x[j] } else { x[j] - down };
            heap.push(Node {
                bound: obj,
                id: next_id,
                path,
                warm: shared.clone(),
                origin: Some((j, up, frac.abs(), obj)),
            });
            next_id += 1;
        }
    }

    let hit_limit = !heap.is_empty()
        && heap
            .iter()
            .any(|nd| incumbent.as_ref().is_none_or(|(b, _)| nd.bound > b + prune_gap(*b)));
    let status = match (&incumbent, hit_limit) {
        (_, true) => SolveStatus::NodeLimit,
        (Some(_), false) => SolveStatus::Optimal,
        (None, false) => SolveStatus::Infeasible,
    };
    let Some((objective, values)) = incumbent else {
        return Ok(SolveResult {
            root_bound,
            ..fail(nodes, lp_iterations, status)
        });
    };
    let violations = check_solution(p, &values, cfg.into());
    if !violations.is_empty() {
        return Err(Error::Solver(format!("incumbent fails the solution check: {violations:?}")));
    }
    if objective > root_bound + 1e-6 * root_bound.abs().max(1.0) {
        return Err(Error::Solver(format!(
            "integer optimum {objective} exceeds the root relaxation {root_bound}"
        )));
    }
    Ok(SolveResult {
        status,
        objective,
        values,
        nodes,
        lp_iterations,
        root_bound,
        wall_time: start.elapsed(),
    })
}

/// Bounds handed to the relaxation. Propagated bounds of continuous
/// variables can shrink to slivers whose every vertex misses the rows by more
/// than the feasibility tolerance, so only integer bounds are passed on.
fn lp_bounds(p: &LpProblem, lo: &[f64], hi: &[f64], j: usize) -> (f64, f64) {
    if p.kinds[j].is_integral() {
        (lo[j], hi[j])
    } else {
        (p.lower[j], p.upper[j])
    }
}

fn prune_gap(best: f64) -> f64 {
    1e-9 * best.abs().max(1.0)
}

fn frac_dist(v: f64) -> f64 {
    let f = v - v.floor();
    f.min(1.0 - f)
}

/// Picks `(variable, split point)`. Fractional variables of the highest
/// priority class are branched on, but an unfixed variable of a strictly
/// higher class is split first even at an integral value; with the action
/// variables ranked highest this fixes the action before any neuron
/// indicator is branched on.
fn select_branch(
    p: &LpProblem,
    cfg: &SolverConfig,
    int_vars: &[usize],
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    pseudo: &[PseudoCost],
) -> Option<(usize, f64)> {
    let fractional: Vec<usize> = int_vars
        .iter()
        .copied()
        .filter(|&j| frac_dist(x[j]) > cfg.integrality_tol)
        .collect();
    let top = fractional.iter().map(|&j| p.priority[j]).max()?;
    let unfixed = int_vars
        .iter()
        .copied()
        .filter(|&j| p.priority[j] > top && lo[j] < hi[j])
        .max_by(|&a, &b| p.priority[a].cmp(&p.priority[b]).then(b.cmp(&a)));
    if let Some(j) = unfixed {
        let v = x[j].round().clamp(lo[j], hi[j]);
        // Split so that both sides are nonempty.
        let split = if v >= hi[j] { v - 1.0 } else { v };
        return Some((j, split));
    }
    let pool = fractional.into_iter().filter(|&j| p.priority[j] == top);
    let j = match cfg.branching {
        Branching::MostFractional => pool.max_by(|&a, &b| frac_dist(x[a]).total_cmp(&frac_dist(x[b])).then(b.cmp(&a))),
        Branching::PseudoCost => {
            let avg = |k: usize| {
                let (s, c) = pseudo
                    .iter()
                    .filter(|pc| pc.count[k] > 0)
                    .fold((0.0, 0u32), |(s, c), pc| (s + pc.sum[k] / pc.count[k] as f64, c + 1));
                if c == 0 {
                    1.0
                } else {
                    s / c as f64
                }
            };
            let (avg_down, avg_up) = (avg(0), avg(1));
            let score = |j: usize| {
                let pc = &pseudo[j];
                let est = |k: usize, a: f64| if pc.count[k] > 0 { pc.sum[k] / pc.count[k] as f64 } else { a };
                let f = x[j] - x[j].floor();
                let down = est(0, avg_down) * f;
                let up = est(1, avg_up) * (1.0 - f);
                down.max(1e-6) * up.max(1e-6)
            };
            pool.max_by(|&a, &b| score(a).total_cmp(&score(b)).then(b.cmp(&a)))
        }
    }?;
    Some((j, x[j]))
}

/// Fixes integer variables at their rounded values and re-solves. Returns the
/// polished point, or `None` when rounding breaks feasibility.
fn polish(
    p: &LpProblem,
    cfg: &SolverConfig,
    tab: &Tableau,
    int_vars: &[usize],
    lp_iterations: &mut usize,
) -> Result<Option<(f64, Vec<f64>)>> {
    let x = tab.structural();
    let exact = int_vars.iter().all(|&j| x[j] == x[j].round());
    let vals = if exact {
        x.to_vec()
    } else {
        let mut t = tab.clone();
        t.iterations = 0;
        for &j in int_vars {
            let r = x[j].round();
            t.set_bounds(j, r, r);
        }
        let out = t.solve(cfg)?;
        *lp_iterations += t.iterations;
        if out != LpOutcome::Optimal {
            return Ok(None);
        }
        t.structural().to_vec()
    };
    if !check_solution(p, &vals, cfg.into()).is_empty() {
        return Ok(None);
    }
    Ok(Some((p.objective_value(&vals), vals)))
}
