//! The per-state decision model `max_x R(S, x) + rho * V(S, x)` as a MILP.
//!
//! Action variables follow [`ActionLayout`]: one binary per candidate next
//! vertex, integer load and unload counts per cargo key, and continuous
//! splits `m[key, v]` of the carried-after count over the next vertices. The
//! split linearizes the product of the carried count and the next-vertex
//! choice in the distance reward; since exactly one indicator is 1, only one
//! split can be nonzero.
//!
//! A network is embedded neuron by neuron. Pre-activations get interval
//! bounds `[lo, hi]` from [`propagate_bounds`]; neurons with `hi <= 0` are
//! dropped, neurons with `lo >= 0` pass through, and the rest get a binary
//! indicator with big-M constants `-lo` and `hi`.

use crate::error::{Error, Result};
use crate::features::{affine_form, ActionLayout, AffineFeatureForm, FeatureBounds, FeatureSpec};
use crate::mdp::{Action, Instance, State};
use crate::solver::{solve_milp, write_lp, LpProblem, Sense, SolveResult, SolveStatus, SolverConfig, VarKind};
use crate::vfa::{NeuralVfa, PolyVfa, Vfa};

const PRIORITY_FEATURE_COUNTS: u32 = 1001;
const PRIORITY_NEXT: u32 = 1000;
const PRIORITY_COUNTS: u32 = 999;
const PRIORITY_LAYER0: u32 = 100;

/// Variables of one hidden neuron. `y` is `None` when the neuron is stably inactive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronVars {
    pub pre: Option<usize>,
    pub post: Option<usize>,
    pub indicator: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionModel {
    pub problem: LpProblem,
    /// Action variables occupy indices `0..layout.len()` of the problem.
    pub layout: ActionLayout,
    pub features: Vec<usize>,
    pub neurons: Vec<Vec<NeuronVars>>,
}

impl DecisionModel {
    pub fn binaries(&self) -> usize {
        self.problem.kinds.iter().filter(|&&k| k == VarKind::Binary).count()
    }

    pub fn unstable_neurons(&self) -> usize {
        self.neurons.iter().flatten().filter(|n| n.indicator.is_some()).count()
    }

    /// Pins the action variables to the encoding of `x`.
    pub fn fix_action(&mut self, x: &Action) -> Result<()> {
        let vals = self.layout.values(x)?;
        for (j, v) in vals.into_iter().enumerate() {
            if v < self.problem.lower[j] || v > self.problem.upper[j] {
                return Err(Error::Solver(format!(
                    "fixed value {v} of {} is outside its bounds",
                    self.problem.names[j]
                )));
            }
            self.problem.fix(j, v);
        }
        Ok(())
    }

    pub fn to_lp(&self) -> String {
        write_lp(&self.problem)
    }
}

/// Pre-activation interval of every hidden neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub pre: Vec<Vec<(f64, f64)>>,
}

impl LayerBounds {
    pub fn contains(&self, pre: &[Vec<f64>], tol: f64) -> bool {
        self.pre.len() == pre.len()
            && self.pre.iter().zip(pre).all(|(b, p)| {
                b.len() == p.len() && b.iter().zip(p).all(|(&(lo, hi), &v)| v >= lo - tol && v <= hi + tol)
            })
    }
}

/// Interval arithmetic through the hidden layers.
pub fn propagate_bounds(v: &NeuralVfa, fb: &FeatureBounds) -> Result<LayerBounds> {
    check_feature_bounds(v, fb)?;
    Ok(LayerBounds {
        pre: interval_pass(v, &fb.lower, &fb.upper),
    })
}

/// Sub-boxes per action-dependent feature in [`refine_bounds`], before the
/// total is capped at [`MAX_SUB_BOXES`] per next vertex.
const SPLITS: usize = 4;
const MAX_SUB_BOXES: usize = 256;

/// Tighter intervals from the union of interval passes over pieces of the
/// feature box: one per candidate next vertex with its one-hot block fixed,
/// and the remaining action-dependent features cut into equal slices.
/// Always contained in [`propagate_bounds`].
pub fn refine_bounds(v: &NeuralVfa, spec: &FeatureSpec, candidates: &[usize], fb: &FeatureBounds) -> Result<LayerBounds> {
    check_feature_bounds(v, fb)?;
    let one_hot: Vec<usize> = (0..spec.vertices).map(|u| spec.next_vertex(u)).collect();
    let free: Vec<usize> = (0..fb.len())
        .filter(|f| !one_hot.contains(f) && fb.lower[*f] < fb.upper[*f])
        .collect();
    let mut splits = SPLITS;
    while splits > 1 && splits.pow(free.len() as u32) > MAX_SUB_BOXES {
        splits -= 1;
    }
    let mut out: Option<Vec<Vec<(f64, f64)>>> = None;
    let mut lo = fb.lower.clone();
    let mut hi = fb.upper.clone();
    for &c in candidates {
        let fits = one_hot.iter().all(|&f| {
            let val = if f == spec.next_vertex(c) { 1.0 } else { 0.0 };
            lo[f] = val;
            hi[f] = val;
            val >= fb.lower[f] && val <= fb.upper[f]
        });
        if !fits {
            continue;
        }
        for cell in 0..splits.pow(free.len() as u32) {
            let mut rest = cell;
            for &f in &free {
                let k = rest % splits;
                rest /= splits;
                let width = (fb.upper[f] - fb.lower[f]) / splits as f64;
                lo[f] = fb.lower[f] + width * k as f64;
                hi[f] = if k + 1 == splits { fb.upper[f] } else { fb.lower[f] + width * (k + 1) as f64 };
            }
            let pre = interval_pass(v, &lo, &hi);
            match &mut out {
                None => out = Some(pre),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().flatten().zip(pre.iter().flatten()) {
                        a.0 = a.0.min(b.0);
                        a.1 = a.1.max(b.1);
                    }
                }
            }
        }
    }
    match out {
        Some(pre) => Ok(LayerBounds { pre }),
        None => propagate_bounds(v, fb),
    }
}

fn check_feature_bounds(v: &NeuralVfa, fb: &FeatureBounds) -> Result<()> {
    if fb.len() != v.features() {
        return Err(Error::shape(v.features(), fb.len()));
    }
    if fb.lower.iter().chain(&fb.upper).any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("feature bounds"));
    }
    Ok(())
}

fn interval_pass(v: &NeuralVfa, lower: &[f64], upper: &[f64]) -> Vec<Vec<(f64, f64)>> {
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    let mut pre = Vec::with_capacity(v.depth());
    for layer in &v.layers[..v.depth()] {
        let mut bounds = Vec::with_capacity(layer.rows);
        for r in 0..layer.rows {
            let (mut l, mut h) = (0.0, 0.0);
            for (c, &w) in layer.row(r).iter().enumerate() {
                let (a, b) = (w * lo[c], w * hi[c]);
                l += a.min(b);
                h += a.max(b);
            }
            bounds.push((l, h));
        }
        lo = bounds.iter().map(|b| b.0.max(0.0)).collect();
        hi = bounds.iter().map(|b| b.1.max(0.0)).collect();
        pre.push(bounds);
    }
    pre
}

pub fn build_decision_model(inst: &Instance, s: &State) -> Result<DecisionModel> {
    s.check(&inst.config)?;
    let layout = ActionLayout::new(inst, s);
    let p = &inst.rewards;
    let g = &inst.graph;
    let cfg = &inst.config;
    let loc = s.location;
    let bounds = layout.bounds();
    let mut lp = LpProblem::new();

    for (c, &v) in layout.candidates.iter().enumerate() {
        let j = lp.add_var(format!("u_{v}"), VarKind::Binary, 0.0, 1.0, -p.travel * g.edge_length(loc, v));
        debug_assert_eq!(j, layout.next_var(c));
        lp.priority[j] = PRIORITY_NEXT;
    }
    let mut loads = Vec::new();
    let mut unloads_returning = Vec::new();
    let mut balance = Vec::new();
    for (key, kv) in layout.keys.iter().zip(&layout.vars) {
        let tag = format!("{}_{}", key.dest, key.due);
        if let Some(i) = kv.load {
            let j = lp.add_var(format!("ld_{tag}"), VarKind::Integer, bounds[i].0, bounds[i].1, -p.handling);
            debug_assert_eq!(j, i);
            lp.priority[j] = PRIORITY_COUNTS;
            loads.push(j);
            balance.push((j, 1.0));
        }
        if let Some(i) = kv.unload {
            let mut obj = -p.handling;
            if key.dest == loc {
                obj += p.delivery;
            } else if key.due == 0 {
                obj -= p.penalty;
            }
            let j = lp.add_var(format!("ul_{tag}"), VarKind::Integer, bounds[i].0, bounds[i].1, obj);
            debug_assert_eq!(j, i);
            lp.priority[j] = PRIORITY_COUNTS;
            if key.returns_to_waiting() {
                unloads_returning.push(j);
            }
            balance.push((j, -1.0));
        }
        for (c, &i) in kv.split.iter().enumerate() {
            let v = layout.candidates[c];
            let gain = p.distance * (g.dist(loc, key.dest) - g.dist(v, key.dest));
            let j = lp.add_var(format!("m_{tag}_{v}"), VarKind::Continuous, bounds[i].0, bounds[i].1, gain);
            debug_assert_eq!(j, i);
        }
    }

    let choose: Vec<(usize, f64)> = (0..layout.candidates.len()).map(|c| (layout.next_var(c), 1.0)).collect();
    lp.add_constraint("choose_next", &choose, Sense::Eq, 1.0);
    for (key, kv) in layout.keys.iter().zip(&layout.vars) {
        let tag = format!("{}_{}", key.dest, key.due);
        if key.forced {
            if let Some(i) = kv.unload {
                lp.add_constraint(format!("force_{tag}"), &[(i, 1.0)], Sense::Eq, key.carried as f64);
            }
        }
        if kv.split.is_empty() {
            continue;
        }
        // sum_v m[v] = carried + load - unload
        let mut row: Vec<(usize, f64)> = kv.split.iter().map(|&i| (i, 1.0)).collect();
        if let Some(i) = kv.load {
            row.push((i, -1.0));
        }
        if let Some(i) = kv.unload {
            row.push((i, 1.0));
        }
        lp.add_constraint(format!("split_{tag}"), &row, Sense::Eq, key.carried as f64);
        let cap = key.max_after() as f64;
        for (c, &i) in kv.split.iter().enumerate() {
            let v = layout.candidates[c];
            lp.add_constraint(format!("link_{tag}_{v}"), &[(i, 1.0), (layout.next_var(c), -cap)], Sense::Le, 0.0);
        }
    }
    if !balance.is_empty() {
        let room = cfg.capacity as f64 - s.carried_total() as f64;
        lp.add_constraint("capacity", &balance, Sense::Le, room);
    }
    if !loads.is_empty() || !unloads_returning.is_empty() {
        let mut row: Vec<(usize, f64)> = unloads_returning.iter().map(|&j| (j, 1.0)).collect();
        row.extend(loads.iter().map(|&j| (j, -1.0)));
        let room = cfg.accumulation_cap as f64 - s.waiting_at(loc) as f64;
        lp.add_constraint("accumulation", &row, Sense::Le, room);
    }
    // Waiting jobs at their due date cannot be loaded and always expire.
    let expiring: u32 = s.jobs().filter(|(j, _)| !j.carried && j.due == 0).map(|(_, k)| k).sum();
    lp.offset = -p.penalty * expiring as f64;

    Ok(DecisionModel {
        problem: lp,
        layout,
        features: Vec::new(),
        neurons: Vec::new(),
    })
}

/// Adds `phi` as continuous variables tied to the action variables.
fn add_features(m: &mut DecisionModel, form: &AffineFeatureForm, fb: &FeatureBounds) -> Result<()> {
    if form.layout != m.layout {
        return Err(Error::shape("feature form for the model's state", "form of another state"));
    }
    if !m.features.is_empty() {
        return Err(Error::Solver("features already embedded".into()));
    }
    for f in 0..form.features() {
        let j = m
            .problem
            .add_var(format!("phi_{f}"), VarKind::Continuous, fb.lower[f], fb.upper[f], 0.0);
        // scale * phi - A x = b
        let mut row = vec![(j, form.scale[f])];
        row.extend(
            form.coefficients[f]
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(i, &a)| (i, -a)),
        );
        m.problem.add_constraint(format!("feat_{f}"), &row, Sense::Eq, form.offset[f]);
        m.features.push(j);
    }
    Ok(())
}

/// For each action-dependent feature whose unscaled value is integral at
/// every integral action, adds an integer copy `cnt_f = scale * phi_f` that
/// is branched on before the action. The network depends on the action only
/// through the features, so fixing these fixes every neuron.
fn add_feature_counts(m: &mut DecisionModel, form: &AffineFeatureForm) {
    let integral = |v: f64| v == v.round();
    for f in 0..form.features() {
        let row = &form.coefficients[f];
        if row.iter().all(|&a| a == 0.0) || !integral(form.offset[f]) {
            continue;
        }
        if row
            .iter()
            .enumerate()
            .any(|(j, &a)| a != 0.0 && !(m.problem.kinds[j].is_integral() && integral(a)))
        {
            continue;
        }
        let phi = m.features[f];
        let scale = form.scale[f];
        let lo = (m.problem.lower[phi] * scale - 1e-6).ceil();
        let hi = (m.problem.upper[phi] * scale + 1e-6).floor();
        let c = m.problem.add_var(format!("cnt_{f}"), VarKind::Integer, lo, hi, 0.0);
        m.problem.priority[c] = PRIORITY_FEATURE_COUNTS;
        m.problem
            .add_constraint(format!("cnt_{f}"), &[(c, 1.0), (phi, -scale)], Sense::Eq, 0.0);
    }
}

/// Adds `rho * <w, phi>` to the objective.
pub fn embed_poly(m: &mut DecisionModel, v: &PolyVfa, form: &AffineFeatureForm, fb: &FeatureBounds, rho: f64) -> Result<()> {
    if v.features() != form.features() {
        return Err(Error::shape(form.features(), v.features()));
    }
    add_features(m, form, fb)?;
    for (f, &w) in v.weights.iter().enumerate() {
        m.problem.objective[m.features[f]] += rho * w;
    }
    Ok(())
}

/// Adds the network and `rho * output` to the objective. `m_scale` multiplies
/// every big-M constant; anything other than 1 is a fault-injection hook.
pub fn embed_nn(
    m: &mut DecisionModel,
    v: &NeuralVfa,
    form: &AffineFeatureForm,
    fb: &FeatureBounds,
    lb: &LayerBounds,
    rho: f64,
    m_scale: f64,
) -> Result<()> {
    if v.features() != form.features() {
        return Err(Error::shape(form.features(), v.features()));
    }
    if lb.pre.len() != v.depth() || lb.pre.iter().zip(&v.layers).any(|(b, l)| b.len() != l.rows) {
        return Err(Error::shape("layer bounds matching the network", "mismatched bounds"));
    }
    if lb.pre.iter().flatten().any(|&(l, h)| !l.is_finite() || !h.is_finite()) {
        return Err(Error::NonFinite("neuron bounds"));
    }
    add_features(m, form, fb)?;
    add_feature_counts(m, form);
    // Previous layer outputs as optional variables (None = constant 0).
    let mut prev: Vec<Option<usize>> = m.features.iter().map(|&j| Some(j)).collect();
    for (k, (layer, bounds)) in v.layers[..v.depth()].iter().zip(&lb.pre).enumerate() {
        let prio = PRIORITY_LAYER0.saturating_sub(k as u32);
        let mut cur = Vec::with_capacity(layer.rows);
        let mut vars = Vec::with_capacity(layer.rows);
        for (r, &(lo, hi)) in bounds.iter().enumerate() {
            if hi <= 0.0 {
                cur.push(None);
                vars.push(NeuronVars {
                    pre: None,
                    post: None,
                    indicator: None,
                });
                continue;
            }
            let p = m.problem.add_var(format!("p_{k}_{r}"), VarKind::Continuous, lo, hi, 0.0);
            let mut row = vec![(p, 1.0)];
            for (c, &w) in layer.row(r).iter().enumerate() {
                if let (Some(j), true) = (prev[c], w != 0.0) {
                    row.push((j, -w));
                }
            }
            m.problem.add_constraint(format!("pre_{k}_{r}"), &row, Sense::Eq, 0.0);
            if lo >= 0.0 {
                cur.push(Some(p));
                vars.push(NeuronVars {
                    pre: Some(p),
                    post: Some(p),
                    indicator: None,
                });
                continue;
            }
            let (m_neg, m_pos) = (-lo * m_scale, hi * m_scale);
            let y = m.problem.add_var(format!("y_{k}_{r}"), VarKind::Continuous, 0.0, hi, 0.0);
            let b = m.problem.add_var(format!("b_{k}_{r}"), VarKind::Binary, 0.0, 1.0, 0.0);
            m.problem.priority[b] = prio;
            m.problem.add_constraint(format!("relu_lo_{k}_{r}"), &[(y, 1.0), (p, -1.0)], Sense::Ge, 0.0);
            m.problem
                .add_constraint(format!("relu_off_{k}_{r}"), &[(y, 1.0), (p, -1.0), (b, m_neg)], Sense::Le, m_neg);
            m.problem.add_constraint(format!("relu_on_{k}_{r}"), &[(y, 1.0), (b, -m_pos)], Sense::Le, 0.0);
            cur.push(Some(y));
            vars.push(NeuronVars {
                pre: Some(p),
                post: Some(y),
                indicator: Some(b),
            });
        }
        m.neurons.push(vars);
        prev = cur;
    }
    for (c, &w) in v.output_layer().row(0).iter().enumerate() {
        if let Some(j) = prev[c] {
            m.problem.objective[j] += rho * w;
        }
    }
    Ok(())
}

/// Reads the chosen action from an optimal solution.
pub fn extract_action(inst: &Instance, s: &State, m: &DecisionModel, res: &SolveResult) -> Result<Action> {
    if res.status != SolveStatus::Optimal {
        return Err(Error::Solver(format!("cannot extract an action from status {:?}", res.status)));
    }
    let vals = &res.values[..m.layout.len()];
    for (j, &v) in vals.iter().enumerate() {
        if m.problem.kinds[j].is_integral() && (v - v.round()).abs() > 1e-6 {
            return Err(Error::Solver(format!("{} = {v} is not integral", m.problem.names[j])));
        }
    }
    let x = m.layout.action(vals);
    inst.check_action(s, &x)
        .map_err(|e| Error::Solver(format!("extracted action is infeasible: {e}")))?;
    Ok(x)
}

/// Options for one decision solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionOptions {
    pub solver: SolverConfig,
    pub big_m_scale: f64,
}

impl Default for DecisionOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            big_m_scale: 1.0,
        }
    }
}

/// A solved decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// `R(S, x) + rho * V(S, x)` at the optimum.
    pub objective: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub seconds: f64,
}

/// Builds the model for `s` with `vfa` embedded (no VFA when `None`).
pub fn decision_model(
    inst: &Instance,
    spec: &FeatureSpec,
    vfa: Option<&Vfa>,
    s: &State,
    rho: f64,
    big_m_scale: f64,
) -> Result<DecisionModel> {
    let mut m = build_decision_model(inst, s)?;
    if let Some(v) = vfa {
        let form = affine_form(inst, spec, s);
        let fb = FeatureBounds::for_form(spec, &form);
        match v {
            Vfa::Poly(p) => embed_poly(&mut m, p, &form, &fb, rho)?,
            Vfa::Neural(n) => {
                let lb = refine_bounds(n, spec, &form.layout.candidates, &fb)?;
                embed_nn(&mut m, n, &form, &fb, &lb, rho, big_m_scale)?;
            }
        }
    }
    Ok(m)
}

/// `argmax_x R(S, x) + rho * V(S, x)` via the MILP.
pub fn decide(
    inst: &Instance,
    spec: &FeatureSpec,
    vfa: Option<&Vfa>,
    s: &State,
    rho: f64,
    opts: &DecisionOptions,
) -> Result<Decision> {
    let m = decision_model(inst, spec, vfa, s, rho, opts.big_m_scale)?;
    let res = solve_milp(&m.problem, &opts.solver)?;
    let action = extract_action(inst, s, &m, &res)?;
    Ok(Decision {
        action,
        objective: res.objective,
        nodes: res.nodes,
        lp_iterations: res.lp_iterations,
        seconds: res.wall_time.as_secs_f64(),
    })
}
