//! Feasibility-based bound tightening over the constraint rows.
//!
//! Each pass derives, for every row and variable, the bound implied by the
//! other variables' bounds, rounds integer bounds inward, and stops once no
//! bound moves by more than a small threshold. Continuous bounds are loosened
//! by a relative epsilon so rounding never cuts off a feasible point.

use super::{LpProblem, Sense};

const MAX_PASSES: usize = 20;
const MIN_GAIN: f64 = 1e-7;
const SAFETY: f64 = 1e-9;

/// Tightens `lo`/`hi` in place. Returns `false` if the box is proven empty.
pub(crate) fn tighten(p: &LpProblem, lo: &mut [f64], hi: &mut [f64], int_tol: f64) -> bool {
    for _ in 0..MAX_PASSES {
        let mut changed = false;
        for c in &p.constraints {
            let (mut min_act, mut max_act) = (0.0, 0.0);
            for &(j, a) in &c.coeffs {
                if a > 0.0 {
                    min_act += a * lo[j];
                    max_act += a * hi[j];
                } else {
                    min_act += a * hi[j];
                    max_act += a * lo[j];
                }
            }
            let slack = 1e-9 * c.rhs.abs().max(1.0);
            let upper_row = matches!(c.sense, Sense::Le | Sense::Eq);
            let lower_row = matches!(c.sense, Sense::Ge | Sense::Eq);
            if (upper_row && min_act > c.rhs + slack.max(1e-7)) || (lower_row && max_act < c.rhs - slack.max(1e-7)) {
                return false;
            }
            for &(j, a) in &c.coeffs {
                let (own_min, own_max) = if a > 0.0 { (a * lo[j], a * hi[j]) } else { (a * hi[j], a * lo[j]) };
                // Bounds on a * x_j implied by the row.
                let mut t_hi = f64::INFINITY;
                let mut t_lo = f64::NEG_INFINITY;
                if upper_row {
                    t_hi = c.rhs - (min_act - own_min);
                }
                if lower_row {
                    t_lo = c.rhs - (max_act - own_max);
                }
                let (mut new_lo, mut new_hi) = if a > 0.0 { (t_lo / a, t_hi / a) } else { (t_hi / a, t_lo / a) };
                if p.kinds[j].is_integral() {
                    new_lo = (new_lo - int_tol).ceil();
                    new_hi = (new_hi + int_tol).floor();
                } else {
                    new_lo -= SAFETY * new_lo.abs().max(1.0);
                    new_hi += SAFETY * new_hi.abs().max(1.0);
                }
                if new_lo > lo[j] + MIN_GAIN * lo[j].abs().max(1.0) {
                    lo[j] = new_lo.min(hi[j]);
                    changed = true;
                }
                if new_hi < hi[j] - MIN_GAIN * hi[j].abs().max(1.0) {
                    hi[j] = new_hi.max(lo[j]);
                    changed = true;
                }
                if new_lo > hi[j] + 1e-7 * hi[j].abs().max(1.0) || new_hi < lo[j] - 1e-7 * lo[j].abs().max(1.0) {
                    return false;
                }
            }
        }
        if !changed {
            break;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::VarKind;

    #[test]
    fn fixed_input_fixes_relu_indicator() {
        // p = 0.3 fixed; y >= p, y <= p + 2 (1 - b), y <= 3 b.
        let mut p = LpProblem::new();
        let pv = p.add_var("p", VarKind::Continuous, 0.3, 0.3, 0.0);
        let y = p.add_var("y", VarKind::Continuous, 0.0, 3.0, 0.0);
        let b = p.add_var("b", VarKind::Binary, 0.0, 1.0, 0.0);
        p.add_constraint("lo", &[(y, 1.0), (pv, -1.0)], Sense::Ge, 0.0);
        p.add_constraint("off", &[(y, 1.0), (pv, -1.0), (b, 2.0)], Sense::Le, 2.0);
        p.add_constraint("on", &[(y, 1.0), (b, -3.0)], Sense::Le, 0.0);
        let (mut lo, mut hi) = (p.lower.clone(), p.upper.clone());
        assert!(tighten(&p, &mut lo, &mut hi, 1e-6));
        assert_eq!((lo[b], hi[b]), (1.0, 1.0));
        assert!((lo[y] - 0.3).abs() < 1e-8 && (hi[y] - 0.3).abs() < 1e-8);

        let (mut lo, mut hi) = (p.lower.clone(), p.upper.clone());
        lo[pv] = -0.4;
        hi[pv] = -0.4;
        assert!(tighten(&p, &mut lo, &mut hi, 1e-6));
        assert_eq!((lo[b], hi[b]), (0.0, 0.0));
        assert!(hi[y] < 1e-8);
    }

    #[test]
    fn detects_empty_box() {
        let mut p = LpProblem::new();
        let x = p.add_var("x", VarKind::Integer, 0.0, 3.0, 0.0);
        let y = p.add_var("y", VarKind::Integer, 0.0, 3.0, 0.0);
        p.add_constraint("a", &[(x, 1.0), (y, 1.0)], Sense::Ge, 7.0);
        let (mut lo, mut hi) = (p.lower.clone(), p.upper.clone());
        assert!(!tighten(&p, &mut lo, &mut hi, 1e-6));
    }
}
