//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use adp_core::solver::{LpProblem, Sense, SolutionViolation, VarKind};
use adp_core::NeuralVfa;
use rand::Rng;

/// Best objective over all basic feasible solutions, found by solving every
/// `n`-subset of the constraint and bound hyperplanes. `None` if infeasible.
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let n = p.num_vars();
    // Hyperplanes a x = b, plus whether they came from an equality row.
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut equalities: Vec<usize> = Vec::new();
    for c in &p.constraints {
        let mut a = vec![0.0; n];
        for &(j, v) in &c.coeffs {
            a[j] += v;
        }
        if c.sense == Sense::Eq {
            equalities.push(planes.len());
        }
        planes.push((a, c.rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), p.lower[j]));
        planes.push((e, p.upper[j]));
    }
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    let total = planes.len();
    if n > total {
        return None;
    }
    loop {
        if equalities.iter().all(|e| idx.contains(e)) || equalities.len() > n {
            let a: Vec<Vec<f64>> = idx.iter().map(|&i| planes[i].0.clone()).collect();
            let b: Vec<f64> = idx.iter().map(|&i| planes[i].1).collect();
            if let Some(x) = gauss(a, b) {
                if feasible(p, &x, 1e-9) {
                    let v = p.objective_value(&x);
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
        // Next combination.
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < total - n + k {
                idx[k] += 1;
                for t in k + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let r = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[r][c].abs() < 1e-10 {
            return None;
        }
        a.swap(r, c);
        b.swap(r, c);
        for i in 0..n {
            if i != c {
                let f = a[i][c] / a[c][c];
                if f != 0.0 {
                    for k in c..n {
                        a[i][k] -= f * a[c][k];
                    }
                    b[i] -= f * b[c];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

pub fn feasible(p: &LpProblem, x: &[f64], tol: f64) -> bool {
    (0..p.num_vars()).all(|j| x[j] >= p.lower[j] - tol && x[j] <= p.upper[j] + tol)
        && p.constraints.iter().all(|c| {
            let act: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            match c.sense {
                Sense::Le => act <= c.rhs + tol,
                Sense::Ge => act >= c.rhs - tol,
                Sense::Eq => (act - c.rhs).abs() <= tol,
            }
        })
}

/// MILP optimum by enumerating every integer assignment and solving the
/// remaining continuous LP by vertex enumeration.
pub fn brute_force_milp(p: &LpProblem) -> Option<f64> {
    let ints: Vec<usize> = (0..p.num_vars()).filter(|&j| p.kinds[j] != VarKind::Continuous).collect();
    let ranges: Vec<(i64, i64)> = ints
        .iter()
        .map(|&j| (p.lower[j].ceil() as i64, p.upper[j].floor() as i64))
        .collect();
    if ranges.iter().any(|(l, u)| l > u) {
        return None;
    }
    let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let mut best: Option<f64> = None;
    loop {
        let mut q = p.clone();
        for (k, &j) in ints.iter().enumerate() {
            q.lower[j] = cur[k] as f64;
            q.upper[j] = cur[k] as f64;
        }
        if let Some(v) = vertex_enumeration(&q) {
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
        let mut k = 0;
        loop {
            if k == ints.len() {
                return best;
            }
            if cur[k] < ranges[k].1 {
                cur[k] += 1;
                break;
            }
            cur[k] = ranges[k].0;
            k += 1;
        }
    }
}

/// Random bounded problem with `n` variables and `m` rows. Row senses are
/// mixed; the box keeps every LP bounded.
pub fn random_problem<R: Rng>(rng: &mut R, n: usize, m: usize, integer_share: f64) -> LpProblem {
    let mut p = LpProblem::new();
    for j in 0..n {
        let kind = if rng.random_bool(integer_share) {
            if rng.random_bool(0.5) {
                VarKind::Binary
            } else {
                VarKind::Integer
            }
        } else {
            VarKind::Continuous
        };
        let lo = if rng.random_bool(0.3) { -(rng.random_range(0..3) as f64) } else { 0.0 };
        let hi = lo + rng.random_range(1..4) as f64;
        let obj = (rng.random_range(-50..=50) as f64) / 10.0;
        p.add_var(format!("x{j}"), kind, lo, hi, obj);
    }
    for i in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                coeffs.push((j, (rng.random_range(-30..=30) as f64) / 10.0));
            }
        }
        let sense = match rng.random_range(0..6) {
            0 => Sense::Eq,
            1 | 2 => Sense::Ge,
            _ => Sense::Le,
        };
        let rhs = (rng.random_range(-40..=60) as f64) / 10.0;
        p.add_constraint(format!("r{i}"), &coeffs, sense, rhs);
    }
    p
}

/// Second, separately written solution checker.
pub fn independent_violations(p: &LpProblem, x: &[f64], feas: f64, int_tol: f64) -> Vec<SolutionViolation> {
    let mut bounds = Vec::new();
    let mut ints = Vec::new();
    for j in 0..x.len() {
        let v = x[j];
        if !v.is_finite() {
            bounds.push(SolutionViolation::NonFinite { var: j });
            continue;
        }
        if !(p.lower[j] - feas <= v && v <= p.upper[j] + feas) {
            bounds.push(SolutionViolation::Bound {
                var: j,
                value: v,
                lower: p.lower[j],
                upper: p.upper[j],
            });
        }
        if p.kinds[j] != VarKind::Continuous {
            let r = (v + 0.5).floor();
            if (v - r).abs() > int_tol {
                ints.push((j, v));
            }
        }
    }
    // Merge in variable order: bound before integrality per variable.
    let mut out = Vec::new();
    for j in 0..x.len() {
        out.extend(bounds.iter().filter(|b| match b {
            SolutionViolation::Bound { var, .. } | SolutionViolation::NonFinite { var } => *var == j,
            _ => false,
        }).cloned());
        out.extend(ints.iter().filter(|(v, _)| *v == j).map(|&(var, value)| SolutionViolation::Integrality { var, value }));
    }
    if out.iter().any(|v| matches!(v, SolutionViolation::NonFinite { .. })) {
        return out;
    }
    for (i, c) in p.constraints.iter().enumerate() {
        let mut act = 0.0;
        for &(j, a) in &c.coeffs {
            act += a * x[j];
        }
        let room = feas * if c.rhs.abs() > 1.0 { c.rhs.abs() } else { 1.0 };
        let ok = match c.sense {
            Sense::Le => act - c.rhs <= room,
            Sense::Ge => c.rhs - act <= room,
            Sense::Eq => act - c.rhs <= room && c.rhs - act <= room,
        };
        if !ok {
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

/// Plain nested-loop forward pass, written apart from the crate's.
pub fn reference_forward(net: &NeuralVfa, phi: &[f64]) -> f64 {
    let mut y = phi.to_vec();
    let last = net.layers.len() - 1;
    for (k, l) in net.layers.iter().enumerate() {
        let mut z = vec![0.0; l.rows];
        for (r, zr) in z.iter_mut().enumerate() {
            for c in 0..l.cols {
                *zr += l.weights[r * l.cols + c] * y[c];
            }
        }
        if k < last {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        y = z;
    }
    y[0]
}

fn loss(net: &NeuralVfa, phi: &[f64], target: f64) -> f64 {
    0.5 * (target - reference_forward(net, phi)).powi(2)
}

/// Largest relative error between backprop and central differences over
/// the coordinates with `|g| > 1e-8`, plus how many were compared.
pub fn gradient_check(net: &NeuralVfa, phi: &[f64], target: f64, h: f64) -> (f64, usize) {
    let g = net.gradient(&net.forward(phi).unwrap(), target).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, layer) in net.layers.iter().enumerate() {
        for i in 0..layer.weights.len() {
            let analytic = g.layers[k][i];
            if analytic.abs() <= 1e-8 {
                continue;
            }
            let mut plus = net.clone();
            plus.layers[k].weights[i] += h;
            let mut minus = net.clone();
            minus.layers[k].weights[i] -= h;
            let fd = (loss(&plus, phi, target) - loss(&minus, phi, target)) / (2.0 * h);
            worst = worst.max((analytic - fd).abs() / analytic.abs().max(fd.abs()));
            checked += 1;
        }
    }
    (worst, checked)
}

/// Smallest `|pre-activation|` over all hidden neurons; near zero the
/// network is not differentiable.
pub fn kink_distance(net: &NeuralVfa, phi: &[f64]) -> f64 {
    net.forward(phi)
        .unwrap()
        .pre
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Per layer `(fan_in, empirical variance)` of He-initialized weights,
/// pooled over re-initializations until every layer has `draws` samples.
pub fn he_layer_variances<R: Rng>(features: usize, hidden: &[usize], draws: usize, rng: &mut R) -> Vec<(usize, f64)> {
    let probe = NeuralVfa::zeros(features, hidden).unwrap();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); probe.layers.len()];
    while pooled.iter().any(|p| p.len() < draws) {
        let net = NeuralVfa::he_init(features, hidden, rng).unwrap();
        for (p, l) in pooled.iter_mut().zip(&net.layers) {
            if p.len() < draws {
                p.extend(&l.weights);
            }
        }
    }
    pooled
        .iter()
        .zip(&probe.layers)
        .map(|(p, l)| {
            let p = &p[..draws];
            let mean = p.iter().sum::<f64>() / draws as f64;
            let var = p.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
            (l.cols, var)
        })
        .collect()
}

/// Random network whose input looks like a feature vector: bias 1, the rest
/// in `[0, 1]`.
pub fn random_net_and_input<R: Rng>(rng: &mut R, depth: usize) -> (NeuralVfa, Vec<f64>) {
    let features = rng.random_range(2..=20);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=30)).collect();
    let net = NeuralVfa::he_init(features, &hidden, rng).unwrap();
    let mut phi: Vec<f64> = (0..features).map(|_| rng.random::<f64>()).collect();
    phi[0] = 1.0;
    (net, phi)
}
