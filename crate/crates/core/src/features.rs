//! Feature extraction `phi(S, x)`.
//!
//! Every feature is an affine function of the action variables (next-vertex
//! indicators, load and unload counts, and the carried-count split per next
//! vertex), so the same vector can be written as linear equalities inside the
//! decision model. [`extract`] computes it directly from the post-decision
//! inventory; [`affine_form`] returns the coefficients. Tests hold the two
//! routes to exact agreement.
//!
//! Default layout, all entries scaled into `[0, 1]`:
//!
//! | index             | meaning                                            | scale          |
//! |-------------------|----------------------------------------------------|----------------|
//! | 0                 | bias                                               | 1              |
//! | 1                 | jobs carried after the action                      | `Q`            |
//! | 2 .. 2+V          | one-hot of the next vertex                         | 1              |
//! | 2+V .. 2+2V       | waiting jobs per vertex after the action           | `C_acc`        |
//! | 2+2V .. 2+3V      | total time slack of waiting jobs per vertex        | `C_acc * t_max`|
//! | 2+3V .. 2+4V      | (optional) carried jobs by next hop after `v_nxt`  | `Q`            |

use std::fmt::Write as _;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::mdp::{Action, Instance, InstanceConfig, JobType, State};

/// Which feature groups are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub vertices: usize,
    pub capacity: u32,
    pub accumulation_cap: u32,
    pub max_due: u32,
    /// Adds the next-hop group, raising the length to `2 + 4V`.
    pub next_hop: bool,
}

impl FeatureSpec {
    pub fn new(cfg: &InstanceConfig, next_hop: bool) -> Self {
        Self {
            vertices: cfg.vertices,
            capacity: cfg.capacity,
            accumulation_cap: cfg.accumulation_cap,
            max_due: cfg.max_due,
            next_hop,
        }
    }

    pub fn len(&self) -> usize {
        2 + self.groups() * self.vertices
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn groups(&self) -> usize {
        if self.next_hop {
            4
        } else {
            3
        }
    }

    pub const BIAS: usize = 0;
    pub const CARRIED: usize = 1;

    pub fn next_vertex(&self, v: usize) -> usize {
        2 + v
    }

    pub fn waiting(&self, v: usize) -> usize {
        2 + self.vertices + v
    }

    pub fn slack(&self, v: usize) -> usize {
        2 + 2 * self.vertices + v
    }

    pub fn hop(&self, v: usize) -> usize {
        debug_assert!(self.next_hop);
        2 + 3 * self.vertices + v
    }

    /// Per-feature normalization constants.
    pub fn scales(&self) -> Vec<f64> {
        let v = self.vertices;
        let q = self.capacity as f64;
        let acc = self.accumulation_cap as f64;
        let mut s = vec![1.0, q];
        s.extend(std::iter::repeat_n(1.0, v));
        s.extend(std::iter::repeat_n(acc, v));
        s.extend(std::iter::repeat_n(acc * self.max_due as f64, v));
        if self.next_hop {
            s.extend(std::iter::repeat_n(q, v));
        }
        s
    }

    /// Text manifest mapping each index to a description.
    pub fn manifest(&self) -> String {
        let mut out = format!("features {}\n", self.len());
        let _ = writeln!(out, "0 bias");
        let _ = writeln!(out, "1 carried_after / {}", self.capacity);
        for v in 0..self.vertices {
            let _ = writeln!(out, "{} next_vertex_is_{v}", self.next_vertex(v));
        }
        for v in 0..self.vertices {
            let _ = writeln!(
                out,
                "{} waiting_at_{v} / {}",
                self.waiting(v),
                self.accumulation_cap
            );
        }
        for v in 0..self.vertices {
            let _ = writeln!(
                out,
                "{} slack_at_{v} / {}",
                self.slack(v),
                self.accumulation_cap * self.max_due
            );
        }
        if self.next_hop {
            for v in 0..self.vertices {
                let _ = writeln!(out, "{} carried_next_hop_{v} / {}", self.hop(v), self.capacity);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl Deref for FeatureVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Time slack of a waiting job: epochs to spare if it travelled straight to
/// its destination starting now.
fn slack(inst: &Instance, at: usize, dest: usize, due: u32) -> f64 {
    (due as f64 - inst.graph.hops(at, dest) as f64).max(0.0)
}

/// Direct evaluation from the post-decision inventory.
pub fn extract(inst: &Instance, spec: &FeatureSpec, s: &State, x: &Action) -> Result<FeatureVector> {
    let post = inst.post_decision(s, x)?;
    let scales = spec.scales();
    let mut phi = vec![0.0; spec.len()];
    phi[FeatureSpec::BIAS] = 1.0;
    phi[FeatureSpec::CARRIED] = post.carried_total() as f64;
    phi[spec.next_vertex(x.next)] = 1.0;
    for (j, &k) in &post.waiting {
        phi[spec.waiting(j.at)] += k as f64;
        phi[spec.slack(j.at)] += k as f64 * slack(inst, j.at, j.dest, j.due);
    }
    if spec.next_hop {
        for (&(dest, _), &k) in &post.carried {
            if dest != x.next {
                phi[spec.hop(inst.graph.next_hop(x.next, dest))] += k as f64;
            }
        }
    }
    for (p, s) in phi.iter_mut().zip(&scales) {
        *p /= s;
    }
    Ok(FeatureVector(phi))
}

/// Jobs at the agent location sharing a destination and due time, carried or waiting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CargoKey {
    pub dest: usize,
    pub due: u32,
    pub carried: u32,
    pub waiting: u32,
    /// Carried jobs of this key must all be unloaded (at destination or due).
    pub forced: bool,
}

impl CargoKey {
    pub fn loadable(&self) -> u32 {
        if self.due > 0 {
            self.waiting
        } else {
            0
        }
    }

    /// Most jobs of this key that can be on board after the action.
    pub fn max_after(&self) -> u32 {
        let keep = if self.forced { 0 } else { self.carried };
        keep + self.loadable()
    }

    /// Unloads here become waiting jobs at the current vertex.
    pub fn returns_to_waiting(&self) -> bool {
        !self.forced
    }
}

/// Indices of one key's variables in the action-variable vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeyVars {
    pub load: Option<usize>,
    pub unload: Option<usize>,
    /// One per candidate next vertex, empty when nothing can be carried.
    pub split: Vec<usize>,
}

/// The action variables of a state: `u` (one per candidate next vertex),
/// then per cargo key its load count, unload count and carried split.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionLayout {
    pub location: usize,
    pub candidates: Vec<usize>,
    pub keys: Vec<CargoKey>,
    pub vars: Vec<KeyVars>,
    len: usize,
}

impl ActionLayout {
    pub fn new(inst: &Instance, s: &State) -> Self {
        let loc = s.location;
        let candidates = inst.graph.candidates(loc);
        let mut keys: Vec<CargoKey> = Vec::new();
        for (j, k) in s.jobs() {
            if j.at != loc {
                continue;
            }
            let pos = keys.iter().position(|c| c.dest == j.dest && c.due == j.due);
            let key = match pos {
                Some(p) => &mut keys[p],
                None => {
                    keys.push(CargoKey {
                        dest: j.dest,
                        due: j.due,
                        carried: 0,
                        waiting: 0,
                        forced: j.dest == loc || j.due == 0,
                    });
                    keys.last_mut().expect("just pushed")
                }
            };
            if j.carried {
                key.carried += k;
            } else {
                key.waiting += k;
            }
        }
        keys.sort_by_key(|c| (c.dest, c.due));
        let mut len = candidates.len();
        let mut vars = Vec::with_capacity(keys.len());
        for key in &keys {
            let mut kv = KeyVars::default();
            if key.loadable() > 0 {
                kv.load = Some(len);
                len += 1;
            }
            if key.carried > 0 {
                kv.unload = Some(len);
                len += 1;
            }
            if key.dest != loc && key.max_after() > 0 {
                kv.split = (len..len + candidates.len()).collect();
                len += candidates.len();
            }
            vars.push(kv);
        }
        Self {
            location: loc,
            candidates,
            keys,
            vars,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of the indicator for moving to `candidates[c]`.
    pub fn next_var(&self, c: usize) -> usize {
        c
    }

    /// Box bounds of each variable (forced unloads are fixed).
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(0.0, 1.0); self.len];
        for (key, kv) in self.keys.iter().zip(&self.vars) {
            if let Some(i) = kv.load {
                b[i] = (0.0, key.loadable() as f64);
            }
            if let Some(i) = kv.unload {
                let c = key.carried as f64;
                b[i] = if key.forced { (c, c) } else { (0.0, c) };
            }
            for &i in &kv.split {
                b[i] = (0.0, key.max_after() as f64);
            }
        }
        b
    }

    /// Variable values realizing a feasible action.
    pub fn values(&self, x: &Action) -> Result<Vec<f64>> {
        let loc = self.location;
        let c = self
            .candidates
            .iter()
            .position(|&v| v == x.next)
            .ok_or_else(|| Error::shape("candidate next vertex", x.next))?;
        let mut out = vec![0.0; self.len];
        out[self.next_var(c)] = 1.0;
        for (key, kv) in self.keys.iter().zip(&self.vars) {
            let ld = x
                .loads
                .get(&JobType::waiting(loc, key.dest, key.due))
                .copied()
                .unwrap_or(0);
            let unl = x
                .unloads
                .get(&JobType::carried(loc, key.dest, key.due))
                .copied()
                .unwrap_or(0);
            if let Some(i) = kv.load {
                out[i] = ld as f64;
            }
            if let Some(i) = kv.unload {
                out[i] = unl as f64;
            }
            if !kv.split.is_empty() {
                out[kv.split[c]] = (key.carried + ld).saturating_sub(unl) as f64;
            }
        }
        Ok(out)
    }

    /// Reads an action back from (integral) variable values.
    pub fn action(&self, values: &[f64]) -> Action {
        let loc = self.location;
        let round = |v: f64| v.round().max(0.0) as u32;
        let c = (0..self.candidates.len())
            .max_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        let mut x = Action::move_to(self.candidates[c]);
        for (key, kv) in self.keys.iter().zip(&self.vars) {
            if let Some(i) = kv.load {
                x = x.load(JobType::waiting(loc, key.dest, key.due), round(values[i]));
            }
            if let Some(i) = kv.unload {
                x = x.unload(JobType::carried(loc, key.dest, key.due), round(values[i]));
            }
        }
        x
    }
}

/// `phi = scale^-1 (A vars + b)` over an [`ActionLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFeatureForm {
    pub layout: ActionLayout,
    /// Dense `|F| x layout.len()` coefficients, unscaled.
    pub coefficients: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineFeatureForm {
    pub fn evaluate(&self, vars: &[f64]) -> FeatureVector {
        FeatureVector(
            self.coefficients
                .iter()
                .zip(&self.offset)
                .zip(&self.scale)
                .map(|((row, b), s)| (row.iter().zip(vars).map(|(a, v)| a * v).sum::<f64>() + b) / s)
                .collect(),
        )
    }

    pub fn features(&self) -> usize {
        self.offset.len()
    }

    /// Range of each scaled feature over the variable box.
    pub fn box_bounds(&self) -> FeatureBounds {
        let bounds = self.layout.bounds();
        let mut lower = Vec::with_capacity(self.features());
        let mut upper = Vec::with_capacity(self.features());
        for ((row, b), s) in self.coefficients.iter().zip(&self.offset).zip(&self.scale) {
            let (mut lo, mut hi) = (*b, *b);
            for (a, &(l, u)) in row.iter().zip(&bounds) {
                if *a > 0.0 {
                    lo += a * l;
                    hi += a * u;
                } else if *a < 0.0 {
                    lo += a * u;
                    hi += a * l;
                }
            }
            lower.push(lo / s);
            upper.push(hi / s);
        }
        FeatureBounds { lower, upper }
    }
}

pub fn affine_form(inst: &Instance, spec: &FeatureSpec, s: &State) -> AffineFeatureForm {
    let layout = ActionLayout::new(inst, s);
    let loc = s.location;
    let nf = spec.len();
    let mut a = vec![vec![0.0; layout.len()]; nf];
    let mut b = vec![0.0; nf];
    b[FeatureSpec::BIAS] = 1.0;
    b[FeatureSpec::CARRIED] = s.carried_total() as f64;
    for (c, &v) in layout.candidates.iter().enumerate() {
        a[spec.next_vertex(v)][layout.next_var(c)] = 1.0;
    }
    for (j, k) in s.jobs().filter(|(j, _)| !j.carried) {
        b[spec.waiting(j.at)] += k as f64;
        b[spec.slack(j.at)] += k as f64 * slack(inst, j.at, j.dest, j.due);
    }
    for (key, kv) in layout.keys.iter().zip(&layout.vars) {
        let sl = slack(inst, loc, key.dest, key.due);
        if let Some(i) = kv.load {
            a[FeatureSpec::CARRIED][i] += 1.0;
            a[spec.waiting(loc)][i] -= 1.0;
            a[spec.slack(loc)][i] -= sl;
        }
        if let Some(i) = kv.unload {
            a[FeatureSpec::CARRIED][i] -= 1.0;
            if key.returns_to_waiting() {
                a[spec.waiting(loc)][i] += 1.0;
                a[spec.slack(loc)][i] += sl;
            }
        }
        if spec.next_hop {
            for (c, &i) in kv.split.iter().enumerate() {
                let v = layout.candidates[c];
                if v != key.dest {
                    a[spec.hop(inst.graph.next_hop(v, key.dest))][i] += 1.0;
                }
            }
        }
    }
    AffineFeatureForm {
        layout,
        coefficients: a,
        offset: b,
        scale: spec.scales(),
    }
}

/// Elementwise bounds on the scaled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeatureBounds {
    /// Global bounds: bias fixed at 1, every other feature in `[0, 1]`.
    pub fn global(spec: &FeatureSpec) -> Self {
        let mut lower = vec![0.0; spec.len()];
        let mut upper = vec![1.0; spec.len()];
        lower[FeatureSpec::BIAS] = 1.0;
        upper[FeatureSpec::BIAS] = 1.0;
        Self { lower, upper }
    }

    /// Global bounds intersected with the range the state's variable box allows.
    pub fn for_form(spec: &FeatureSpec, form: &AffineFeatureForm) -> Self {
        let g = Self::global(spec);
        let b = form.box_bounds();
        let lower: Vec<f64> = g.lower.iter().zip(&b.lower).map(|(x, y)| x.max(*y)).collect();
        let upper: Vec<f64> = g
            .upper
            .iter()
            .zip(&b.upper)
            .zip(&lower)
            .map(|((x, y), lo)| x.min(*y).max(*lo))
            .collect();
        Self { lower, upper }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, phi: &[f64], tol: f64) -> bool {
        phi.len() == self.len()
            && phi
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(p, (l, u))| *p >= l - tol && *p <= u + tol)
    }
}

/// Global bounds for an instance configuration.
pub fn bounds(cfg: &InstanceConfig, next_hop: bool) -> FeatureBounds {
    FeatureBounds::global(&FeatureSpec::new(cfg, next_hop))
}
