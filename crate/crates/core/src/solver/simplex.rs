//! Dense bounded-variable primal simplex.
//!
//! Every row `a_i x` gets a logical variable `s_i = a_i x` whose bounds encode
//! the sense, so the working system is `[A | -I] (x, s) = 0` and the starting
//! basis is all logicals. The tableau holds `B^-1 [A | -I]` explicitly, with
//! rows normalized so the basic variable has coefficient 1.
//!
//! Infeasible starts are handled by a composite phase 1 that maximizes the
//! negated sum of infeasibilities and stops each step at the first
//! breakpoint, so the same code warm-starts branch-and-bound children after a
//! bound change.

use std::sync::Arc;
use std::time::Instant;

use super::{LpProblem, Sense, SolveResult, SolveStatus, SolverConfig};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;

/// Feasibility tolerance relative to the magnitude of a finite bound.
fn scaled(tol: f64, bound: f64) -> f64 {
    if bound.is_finite() {
        tol * bound.abs().max(1.0)
    } else {
        tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau {
    m: usize,
    n: usize,
    width: usize,
    /// Row-major `m x width`.
    t: Vec<f64>,
    /// Phase-2 reduced costs.
    d: Vec<f64>,
    cost: Vec<f64>,
    pub(crate) lo: Vec<f64>,
    pub(crate) hi: Vec<f64>,
    pub(crate) x: Vec<f64>,
    basis: Vec<usize>,
    /// Row of each basic variable, `usize::MAX` when nonbasic.
    row_of: Vec<usize>,
    at_upper: Vec<bool>,
    rows: Arc<Vec<Vec<(usize, f64)>>>,
    pivots_since_refactor: usize,
    pub(crate) iterations: usize,
}

impl Tableau {
    pub(crate) fn new(p: &LpProblem) -> Result<Self> {
        p.validate()?;
        let n = p.num_vars();
        let m = p.num_constraints();
        let width = n + m;
        let mut t = vec![0.0; m * width];
        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        let rows: Vec<Vec<(usize, f64)>> = p.constraints.iter().map(|c| c.coeffs.clone()).collect();
        for (i, c) in p.constraints.iter().enumerate() {
            for &(j, a) in &c.coeffs {
                t[i * width + j] = -a;
            }
            t[i * width + n + i] = 1.0;
            let (l, u) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            lo.push(l);
            hi.push(u);
        }
        let mut cost = p.objective.clone();
        cost.resize(width, 0.0);
        let mut x = vec![0.0; width];
        x[..n].copy_from_slice(&lo[..n]);
        let basis: Vec<usize> = (n..width).collect();
        let mut row_of = vec![usize::MAX; width];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        let mut tab = Self {
            m,
            n,
            width,
            t,
            d: cost.clone(),
            cost,
            lo,
            hi,
            x,
            basis,
            row_of,
            at_upper: vec![false; width],
            rows: Arc::new(rows),
            pivots_since_refactor: 0,
            iterations: 0,
        };
        for i in n..width {
            tab.d[i] = 0.0;
        }
        tab.recompute_basics();
        Ok(tab)
    }

    pub(crate) fn structural(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub(crate) fn objective(&self) -> f64 {
        self.cost[..self.n].iter().zip(&self.x[..self.n]).map(|(c, v)| c * v).sum()
    }

    fn recompute_basics(&mut self) {
        for i in 0..self.m {
            let row = &self.t[i * self.width..(i + 1) * self.width];
            let mut v = 0.0;
            for (k, &a) in row.iter().enumerate() {
                if a != 0.0 && self.row_of[k] == usize::MAX {
                    v -= a * self.x[k];
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    /// Changes the bounds of a structural variable, keeping the basis.
    pub(crate) fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.row_of[j] != usize::MAX {
            return;
        }
        let target = if self.at_upper[j] { hi } else { lo };
        let delta = target - self.x[j];
        if delta == 0.0 {
            return;
        }
        self.x[j] = target;
        for i in 0..self.m {
            let a = self.t[i * self.width + j];
            if a != 0.0 {
                self.x[self.basis[i]] -= a * delta;
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let w = self.width;
        let piv = self.t[r * w + j];
        let inv = 1.0 / piv;
        let mut nz = Vec::new();
        for k in 0..w {
            let v = &mut self.t[r * w + k];
            if *v != 0.0 {
                *v *= inv;
                nz.push(k);
            }
        }
        self.t[r * w + j] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[j];
            if f != 0.0 {
                for &k in &nz {
                    row[k] -= f * prow[k];
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for &k in &nz {
                self.d[k] -= f * prow[k];
            }
            self.d[j] = 0.0;
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = usize::MAX;
        self.basis[r] = j;
        self.row_of[j] = r;
        self.pivots_since_refactor += 1;
    }

    /// Rebuilds `B^-1 [A | -I]` from the original rows for the current basis.
    fn refactor(&mut self) -> Result<()> {
        let (m, n, w) = (self.m, self.n, self.width);
        let mut t = vec![0.0; m * w];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row.iter() {
                t[i * w + j] = -a;
            }
            t[i * w + n + i] = 1.0;
        }
        self.t = t;
        self.d = self.cost.clone();
        let wanted = self.basis.clone();
        self.basis = (n..w).collect();
        self.row_of = vec![usize::MAX; w];
        for (i, &b) in self.basis.iter().enumerate() {
            self.row_of[b] = i;
        }
        // Logicals that stay basic keep their own row; only structurals pivot.
        let mut assigned = vec![false; m];
        for &b in &wanted {
            if b >= n {
                assigned[b - n] = true;
            }
        }
        for &b in wanted.iter().filter(|&&b| b < n) {
            let mut best = None;
            let mut best_abs = 1e-11;
            for i in (0..m).filter(|&i| !assigned[i]) {
                let a = self.t[i * w + b].abs();
                if a > best_abs {
                    best_abs = a;
                    best = Some(i);
                }
            }
            match best {
                Some(r) => {
                    assigned[r] = true;
                    self.pivot(r, b);
                }
                // Numerically dependent column: drop it to a finite bound and
                // leave the row's logical basic. Phase 1 repairs feasibility.
                None if self.lo[b].is_finite() => self.at_upper[b] = false,
                None if self.hi[b].is_finite() => self.at_upper[b] = true,
                None => return Err(Error::Solver("singular basis during refactorization".into())),
            }
        }
        for j in 0..w {
            if self.row_of[j] == usize::MAX {
                self.x[j] = if self.at_upper[j] { self.hi[j] } else { self.lo[j] };
            }
        }
        self.recompute_basics();
        self.pivots_since_refactor = 0;
        Ok(())
    }

    fn infeasibility(&self, i: usize, tol: f64) -> f64 {
        let b = self.basis[i];
        let v = self.x[b];
        if v < self.lo[b] - scaled(tol, self.lo[b]) {
            1.0
        } else if v > self.hi[b] + scaled(tol, self.hi[b]) {
            -1.0
        } else {
            0.0
        }
    }

    /// Largest violation of `[A | -I] x = 0` or of a nonbasic bound.
    fn residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let act: f64 = row.iter().map(|&(j, a)| a * self.x[j]).sum();
            let scale = 1.0 + act.abs();
            worst = worst.max((act - self.x[self.n + i]).abs() / scale);
        }
        worst
    }

    pub(crate) fn solve(&mut self, cfg: &SolverConfig) -> Result<LpOutcome> {
        let tol = cfg.feasibility_tol;
        let limit = 50 * (self.width + 10) + 10_000;
        let refactor_every = (2 * self.m).max(100);
        let mut bland = false;
        let mut stall = 0usize;
        let mut refactors = 0usize;
        let mut steps = 0usize;
        let mut phase_cost = vec![0.0; self.width];
        loop {
            steps += 1;
            if steps > limit {
                return Err(Error::Solver(format!("simplex iteration limit {limit} reached")));
            }
            if self.pivots_since_refactor >= refactor_every {
                self.refactor()?;
            }
            let weights: Vec<(usize, f64)> = (0..self.m)
                .map(|i| (i, self.infeasibility(i, tol)))
                .filter(|&(_, w)| w != 0.0)
                .collect();
            let phase1 = !weights.is_empty();
            let dcol: &[f64] = if phase1 {
                phase_cost.iter_mut().for_each(|v| *v = 0.0);
                for &(i, wi) in &weights {
                    let row = &self.t[i * self.width..(i + 1) * self.width];
                    for (k, &a) in row.iter().enumerate() {
                        if a != 0.0 {
                            phase_cost[k] -= wi * a;
                        }
                    }
                }
                &phase_cost
            } else {
                &self.d
            };

            // Entering variable.
            let mut enter: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for k in 0..self.width {
                if self.row_of[k] != usize::MAX || self.hi[k] - self.lo[k] <= 0.0 {
                    continue;
                }
                let dk = dcol[k];
                let dir = if !self.at_upper[k] && dk > tol {
                    1.0
                } else if self.at_upper[k] && dk < -tol {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    enter = Some((k, dir));
                    break;
                }
                if dk.abs() > best {
                    best = dk.abs();
                    enter = Some((k, dir));
                }
            }
            let Some((j, dir)) = enter else {
                if phase1 {
                    return Ok(LpOutcome::Infeasible);
                }
                // Incremental updates drift; the recomputed point must still
                // be feasible before optimality is claimed.
                self.recompute_basics();
                let drifted = (0..self.m).any(|i| self.infeasibility(i, tol) != 0.0);
                if (drifted || self.residual() > 1e-9) && refactors < 3 {
                    refactors += 1;
                    self.refactor()?;
                    continue;
                }
                return Ok(LpOutcome::Optimal);
            };
            let dj = dcol[j];

            // Ratio test.
            let mut theta = self.hi[j] - self.lo[j];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_alpha = 0.0f64;
            for i in 0..self.m {
                let a = self.t[i * self.width + j];
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let alpha = -a * dir;
                let b = self.basis[i];
                let (v, l, u) = (self.x[b], self.lo[b], self.hi[b]);
                let (tl, tu) = (scaled(tol, l), scaled(tol, u));
                let (lim, to_upper) = if alpha > 0.0 {
                    if v < l - tl {
                        ((l - v) / alpha, false)
                    } else if v > u + tu || u == f64::INFINITY {
                        continue;
                    } else {
                        ((u - v).max(0.0) / alpha, true)
                    }
                } else if v > u + tu {
                    ((v - u) / -alpha, true)
                } else if v < l - tl || l == f64::NEG_INFINITY {
                    continue;
                } else {
                    ((v - l).max(0.0) / -alpha, false)
                };
                let better = match leave {
                    _ if lim < theta - 1e-12 => true,
                    None => lim <= theta,
                    Some((r, _)) if lim <= theta + 1e-12 => {
                        if bland {
                            b < self.basis[r]
                        } else {
                            alpha.abs() > leave_alpha
                        }
                    }
                    _ => false,
                };
                if better {
                    theta = theta.min(lim);
                    leave = Some((i, to_upper));
                    leave_alpha = alpha.abs();
                }
            }
            if theta == f64::INFINITY {
                return Ok(LpOutcome::Unbounded);
            }
            self.iterations += 1;
            if theta * dj.abs() <= 1e-12 {
                stall += 1;
                if stall > cfg.stall_threshold {
                    bland = true;
                }
            } else {
                stall = 0;
                bland = false;
            }

            // Step.
            if theta > 0.0 {
                self.x[j] += dir * theta;
                for i in 0..self.m {
                    let a = self.t[i * self.width + j];
                    if a != 0.0 {
                        self.x[self.basis[i]] -= a * dir * theta;
                    }
                }
            }
            match leave {
                Some((r, to_upper)) => {
                    let out = self.basis[r];
                    self.pivot(r, j);
                    self.at_upper[out] = to_upper;
                    self.x[out] = if to_upper { self.hi[out] } else { self.lo[out] };
                    self.at_upper[j] = false;
                }
                None => {
                    self.at_upper[j] = dir > 0.0;
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
            }
        }
    }

    /// Bounds and values of basic structurals are already consistent; this
    /// exposes row count for the branch-and-bound memory budget.
    pub(crate) fn size(&self) -> usize {
        self.t.len()
    }

    #[cfg(test)]
    pub(crate) fn row_for_test(&self, i: usize) -> Vec<f64> {
        self.t[i * self.width..(i + 1) * self.width].to_vec()
    }
}

/// Solves the continuous relaxation (integrality ignored).
pub fn solve_lp(p: &LpProblem, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let start = Instant::now();
    p.validate()?;
    if (0..p.num_vars()).any(|j| p.lower[j] > p.upper[j]) {
        return Ok(SolveResult {
            status: SolveStatus::Infeasible,
            objective: f64::NEG_INFINITY,
            values: Vec::new(),
            nodes: 0,
            lp_iterations: 0,
            root_bound: f64::NEG_INFINITY,
            wall_time: start.elapsed(),
        });
    }
    let mut tab = Tableau::new(p)?;
    let outcome = tab.solve(cfg)?;
    let (status, objective, values) = match outcome {
        LpOutcome::Optimal => {
            let values = tab.structural().to_vec();
            (SolveStatus::Optimal, p.objective_value(&values), values)
        }
        LpOutcome::Infeasible => (SolveStatus::Infeasible, f64::NEG_INFINITY, Vec::new()),
        LpOutcome::Unbounded => (SolveStatus::Unbounded, f64::INFINITY, Vec::new()),
    };
    Ok(SolveResult {
        status,
        objective,
        values,
        nodes: 0,
        lp_iterations: tab.iterations,
        root_bound: objective,
        wall_time: start.elapsed(),
    })
}
