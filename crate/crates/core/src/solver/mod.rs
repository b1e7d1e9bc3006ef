//! Exact LP/MILP solver for the decision models.
//!
//! [`solve_lp`] runs a dense bounded-variable primal simplex; [`solve_milp`]
//! wraps it in best-first branch-and-bound. Problems are always maximized.
//! [`check_solution`] verifies a point against the problem independently of
//! how it was found.

mod bnb;
mod lp_format;
mod propagate;
mod simplex;

use std::time::Duration;

pub use bnb::solve_milp;
pub use lp_format::{parse_lp, write_lp};
pub use simplex::solve_lp;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    /// Sparse `(variable, coefficient)` pairs, variables distinct.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// `maximize c x + offset` subject to linear rows and variable bounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub names: Vec<String>,
    pub kinds: Vec<VarKind>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: Vec<f64>,
    pub offset: f64,
    /// Branching priority per variable; higher branches first.
    pub priority: Vec<u32>,
    pub constraints: Vec<Constraint>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64, obj: f64) -> usize {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.names.push(name.into());
        self.kinds.push(kind);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(obj);
        self.priority.push(0);
        self.names.len() - 1
    }

    /// Adds a row, merging repeated variables and dropping zero coefficients.
    pub fn add_constraint(&mut self, name: impl Into<String>, coeffs: &[(usize, f64)], sense: Sense, rhs: f64) -> usize {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        for &(j, a) in coeffs {
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some(e) => e.1 += a,
                None => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs: merged,
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn num_integral(&self) -> usize {
        self.kinds.iter().filter(|k| k.is_integral()).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.offset
    }

    /// Fixes a variable to a single value.
    pub fn fix(&mut self, var: usize, value: f64) {
        self.lower[var] = value;
        self.upper[var] = value;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        for (len, what) in [
            (self.kinds.len(), "kinds"),
            (self.lower.len(), "lower bounds"),
            (self.upper.len(), "upper bounds"),
            (self.objective.len(), "objective"),
            (self.priority.len(), "priorities"),
        ] {
            if len != n {
                return Err(Error::shape(format!("{n} {what}"), len));
            }
        }
        for j in 0..n {
            if !self.lower[j].is_finite() || !self.upper[j].is_finite() {
                return Err(Error::Solver(format!("variable {} has an infinite bound", self.names[j])));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::NonFinite("objective coefficient"));
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() || c.coeffs.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(Error::Solver(format!("constraint {} is malformed", c.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The node limit was hit; `values` hold the incumbent if one was found.
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    /// Branch-and-bound nodes whose relaxation was solved, root included.
    pub nodes: usize,
    pub lp_iterations: usize,
    /// Objective of the root relaxation.
    pub root_bound: f64,
    pub wall_time: Duration,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branching {
    MostFractional,
    PseudoCost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Primal feasibility, also used as the reduced-cost tolerance.
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    pub node_limit: usize,
    pub branching: Branching,
    /// Consecutive degenerate pivots before Bland's rule takes over.
    pub stall_threshold: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            integrality_tol: 1e-6,
            node_limit: 20_000,
            branching: Branching::MostFractional,
            stall_threshold: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feasibility_tol > 0.0 && self.integrality_tol > 0.0) {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        if self.node_limit == 0 {
            return Err(Error::InvalidConfig("solver.node_limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolutionViolation {
    Bound { var: usize, value: f64, lower: f64, upper: f64 },
    Row { row: usize, activity: f64, sense: Sense, rhs: f64 },
    Integrality { var: usize, value: f64 },
    NonFinite { var: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feasibility: f64,
    pub integrality: f64,
}

impl From<&SolverConfig> for Tolerances {
    fn from(c: &SolverConfig) -> Self {
        Self {
            feasibility: c.feasibility_tol,
            integrality: c.integrality_tol,
        }
    }
}

/// Every bound, row and integrality violation of `x`. Row violations are
/// scaled by the largest of 1, `|rhs|` and the row's terms `|a_j x_j|`.
pub fn check_solution(p: &LpProblem, x: &[f64], tol: Tolerances) -> Vec<SolutionViolation> {
    let mut out = Vec::new();
    if x.len() != p.num_vars() {
        return (x.len()..p.num_vars()).map(|var| SolutionViolation::NonFinite { var }).collect();
    }
    for (j, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            out.push(SolutionViolation::NonFinite { var: j });
            continue;
        }
        if v < p.lower[j] - tol.feasibility || v > p.upper[j] + tol.feasibility {
            out.push(SolutionViolation::Bound {
                var: j,
                value: v,
                lower: p.lower[j],
                upper: p.upper[j],
            });
        }
        if p.kinds[j].is_integral() && (v - v.round()).abs() > tol.integrality {
            out.push(SolutionViolation::Integrality { var: j, value: v });
        }
    }
    if !out.is_empty() && out.iter().any(|v| matches!(v, SolutionViolation::NonFinite { .. })) {
        return out;
    }
    for (i, c) in p.constraints.iter().enumerate() {
        let act = c.activity(x);
        let magnitude = c.coeffs.iter().map(|&(j, a)| (a * x[j]).abs()).fold(c.rhs.abs().max(1.0), f64::max);
        let slack = tol.feasibility * magnitude;
        let bad = match c.sense {
            Sense::Le => act > c.rhs + slack,
            Sense::Ge => act < c.rhs - slack,
            Sense::Eq => (act - c.rhs).abs() > slack,
        };
        if bad {
            out.push(SolutionViolation::Row {
                row: i,
                activity: act,
                sense: c.sense,
                rhs: c.rhs,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LpProblem {
        let mut p = LpProblem::new();
        let x = p.add_var("x", VarKind::Continuous, 0.0, 10.0, 1.0);
        let y = p.add_var("y", VarKind::Integer, 0.0, 10.0, 1.0);
        p.add_constraint("c", &[(x, 1.0), (y, 1.0)], Sense::Le, 4.0);
        p
    }

    #[test]
    fn checker_accepts_feasible_point() {
        let p = tiny();
        assert!(check_solution(&p, &[1.5, 2.0], (&SolverConfig::default()).into()).is_empty());
    }

    #[test]
    fn checker_reports_each_violation_kind() {
        let p = tiny();
        let tol = (&SolverConfig::default()).into();
        let v = check_solution(&p, &[3.0, 1.5], tol);
        assert!(v.iter().any(|e| matches!(e, SolutionViolation::Integrality { var: 1, .. })));
        assert!(v.iter().any(|e| matches!(e, SolutionViolation::Row { row: 0, .. })));
        let v = check_solution(&p, &[-1.0, 0.0], tol);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], SolutionViolation::Bound { var: 0, .. }));
    }

    #[test]
    fn perturbation_of_ten_tolerances_is_caught() {
        let p = tiny();
        let tol: Tolerances = (&SolverConfig::default()).into();
        assert!(check_solution(&p, &[2.0, 2.0], tol).is_empty());
        let v = check_solution(&p, &[2.0 + 10.0 * tol.feasibility * 4.0, 2.0], tol);
        assert!(matches!(v[..], [SolutionViolation::Row { row: 0, .. }]));
    }

    #[test]
    fn binary_bounds_are_clamped() {
        let mut p = LpProblem::new();
        let b = p.add_var("b", VarKind::Binary, -3.0, 7.0, 0.0);
        assert_eq!((p.lower[b], p.upper[b]), (0.0, 1.0));
    }

    #[test]
    fn repeated_coefficients_merge() {
        let mut p = tiny();
        let r = p.add_constraint("d", &[(0, 1.0), (0, 2.0), (1, 0.0)], Sense::Ge, 0.0);
        assert_eq!(p.constraints[r].coeffs, vec![(0, 3.0)]);
    }
}
