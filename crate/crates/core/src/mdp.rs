//! The single-agent transport MDP: a capacitated vehicle roams an undirected
//! graph, loading and unloading jobs that arrive randomly at the vertices.
//!
//! A state is the job inventory (counts per [`JobType`]) plus the agent
//! location. An action picks the next vertex and how many jobs of each type to
//! load or unload at the current vertex. Everything here is a pure function of
//! its inputs plus an explicit random stream.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How many jobs appear at each vertex per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalLaw {
    /// Uniform on `{0, ..., max_new_jobs}`.
    Uniform,
    /// Exactly `max_new_jobs`.
    Fixed,
}

/// Where vertices are placed and how they are connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphLayout {
    /// Random coordinates in the unit square, random spanning tree plus extra edges.
    Random,
    /// Vertices evenly spaced on `[0, 1] x {0}` and joined as a path.
    Line,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub vertices: usize,
    pub max_degree: usize,
    /// Largest number of jobs generated per vertex per epoch.
    pub max_new_jobs: u32,
    /// Waiting jobs allowed per vertex.
    pub accumulation_cap: u32,
    /// Agent capacity.
    pub capacity: u32,
    pub min_due: u32,
    pub max_due: u32,
    pub discount: f64,
    pub seed: u64,
    pub arrivals: ArrivalLaw,
    pub layout: GraphLayout,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            vertices: 5,
            max_degree: 3,
            max_new_jobs: 5,
            accumulation_cap: 45,
            capacity: 20,
            min_due: 2,
            max_due: 8,
            discount: 0.9,
            seed: 1,
            arrivals: ArrivalLaw::Uniform,
            layout: GraphLayout::Random,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.vertices < 2 {
            return fail("instance.vertices must be at least 2");
        }
        if self.capacity < 1 {
            return fail("instance.capacity must be at least 1");
        }
        if self.accumulation_cap < 1 {
            return fail("instance.accumulation_cap must be at least 1");
        }
        if self.min_due < 1 || self.min_due > self.max_due {
            return fail("instance due window must satisfy 1 <= min_due <= max_due");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return fail("instance.discount out of [0,1)");
        }
        if self.layout == GraphLayout::Random && self.max_degree < 2 {
            return fail("instance.max_degree must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    /// Reward per delivered job.
    pub delivery: f64,
    /// Reward per unit of shortest-path distance a carried job moves closer to its destination.
    pub distance: f64,
    /// Cost per unit of edge length travelled.
    pub travel: f64,
    /// Cost per job loaded or unloaded.
    pub handling: f64,
    /// Penalty per job that reaches its due date undelivered.
    pub penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            delivery: 10.0,
            distance: 2.0,
            travel: 1.0,
            handling: 0.5,
            penalty: 10.0,
        }
    }
}

impl RewardParams {
    pub fn zero() -> Self {
        Self {
            delivery: 0.0,
            distance: 0.0,
            travel: 0.0,
            handling: 0.0,
            penalty: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.delivery,
            self.distance,
            self.travel,
            self.handling,
            self.penalty,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("reward parameters must be finite".into()));
        }
        if self.travel < 0.0 || self.handling < 0.0 || self.penalty < 0.0 {
            return Err(Error::InvalidConfig("reward costs must be nonnegative".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    coords: Vec<[f64; 2]>,
    adjacency: Vec<Vec<usize>>,
    /// Edge length matrix; `INFINITY` off the edge set, zero on the diagonal.
    lengths: Vec<Vec<f64>>,
    dist: Vec<Vec<f64>>,
    hops: Vec<Vec<u32>>,
    next_hop: Vec<Vec<usize>>,
}

const MIN_EDGE_LENGTH: f64 = 1e-6;

impl Graph {
    /// Builds a graph from coordinates and an undirected edge list. Edge
    /// lengths are Euclidean distances.
    pub fn from_edges(coords: Vec<[f64; 2]>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = coords.len();
        if n < 2 {
            return Err(Error::InvalidConfig("graph needs at least 2 vertices".into()));
        }
        let mut lengths = vec![vec![f64::INFINITY; n]; n];
        let mut adjacency = vec![Vec::new(); n];
        for (i, row) in lengths.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidConfig(format!("bad edge ({a}, {b})")));
            }
            if lengths[a][b].is_finite() {
                continue;
            }
            let dx = coords[a][0] - coords[b][0];
            let dy = coords[a][1] - coords[b][1];
            let len = (dx * dx + dy * dy).sqrt().max(MIN_EDGE_LENGTH);
            lengths[a][b] = len;
            lengths[b][a] = len;
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let (dist, hops) = shortest_paths(&lengths);
        if dist.iter().flatten().any(|d| !d.is_finite()) {
            return Err(Error::InvalidConfig("graph is not connected".into()));
        }
        let next_hop = (0..n)
            .map(|v| {
                (0..n)
                    .map(|t| {
                        if v == t {
                            return v;
                        }
                        let mut best = usize::MAX;
                        let mut best_len = f64::INFINITY;
                        for &w in &adjacency[v] {
                            let l = lengths[v][w] + dist[w][t];
                            if l < best_len - 1e-12 {
                                best_len = l;
                                best = w;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            coords,
            adjacency,
            lengths,
            dist,
            hops,
            next_hop,
        })
    }

    /// Random connected graph with every degree at most `max_degree`:
    /// coordinates uniform in the unit square, a random spanning tree, then
    /// each remaining vertex pair is added with probability 1/2 if both
    /// endpoints still have spare degree.
    pub fn generate(seed: u64, n: usize, max_degree: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("graph needs at least 2 vertices".into()));
        }
        if max_degree < 2 {
            return Err(Error::InvalidConfig(
                "max_degree must be at least 2 to keep the graph connected".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
            .collect();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut degree = vec![0usize; n];
        let mut edges = Vec::new();
        for k in 1..n {
            let v = order[k];
            // A tree always has a leaf, so with max_degree >= 2 this is nonempty.
            let open: Vec<usize> = order[..k]
                .iter()
                .copied()
                .filter(|&u| degree[u] < max_degree)
                .collect();
            let u = open[rng.random_range(0..open.len())];
            edges.push((u.min(v), u.max(v)));
            degree[u] += 1;
            degree[v] += 1;
        }

        let mut candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|e| !edges.contains(e))
            .collect();
        candidates.shuffle(&mut rng);
        for (a, b) in candidates {
            let coin: bool = rng.random();
            if coin && degree[a] < max_degree && degree[b] < max_degree {
                edges.push((a, b));
                degree[a] += 1;
                degree[b] += 1;
            }
        }
        Self::from_edges(coords, &edges)
    }

    /// Vertices evenly spaced on a unit segment and joined as a path.
    pub fn line(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("graph needs at least 2 vertices".into()));
        }
        let coords = (0..n).map(|i| [i as f64 / (n - 1) as f64, 0.0]).collect();
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(coords, &edges)
    }

    pub fn for_config(cfg: &InstanceConfig) -> Result<Self> {
        match cfg.layout {
            GraphLayout::Random => Self::generate(cfg.seed, cfg.vertices, cfg.max_degree),
            GraphLayout::Line => Self::line(cfg.vertices),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// `v` itself followed by its neighbors, ascending.
    pub fn candidates(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.adjacency[v].len() + 1);
        out.push(v);
        out.extend_from_slice(&self.adjacency[v]);
        out.sort_unstable();
        out
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        a != b && self.lengths[a][b].is_finite()
    }

    /// Edge length, zero for `a == b`, infinite for non-edges.
    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        self.lengths[a][b]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.len() {
            for &b in &self.adjacency[a] {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.dist[a][b]
    }

    pub fn hops(&self, a: usize, b: usize) -> u32 {
        self.hops[a][b]
    }

    /// First vertex after `from` on a shortest path to `to` (lowest index on ties).
    pub fn next_hop(&self, from: usize, to: usize) -> usize {
        self.next_hop[from][to]
    }

    pub fn distance_matrix(&self) -> &[Vec<f64>] {
        &self.dist
    }

    pub fn hop_matrix(&self) -> &[Vec<u32>] {
        &self.hops
    }

    /// Line-oriented text snapshot: `graph <n> <m>`, then `vertex` and `edge` records.
    pub fn to_text(&self) -> String {
        let edges = self.edges();
        let mut s = format!("graph {} {}\n", self.len(), edges.len());
        for (i, c) in self.coords.iter().enumerate() {
            s.push_str(&format!("vertex {i} {:?} {:?}\n", c[0], c[1]));
        }
        for (a, b) in edges {
            s.push_str(&format!("edge {a} {b}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty graph record"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "graph" {
            return Err(Error::parse(1, "expected `graph <n> <m>`"));
        }
        let n: usize = h[1].parse().map_err(|_| Error::parse(1, "bad vertex count"))?;
        let m: usize = h[2].parse().map_err(|_| Error::parse(1, "bad edge count"))?;
        let mut coords = vec![None; n];
        let mut edges = Vec::with_capacity(m);
        for (i, line) in lines {
            let lineno = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<usize> {
                f.get(k)
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::parse(lineno, "bad integer field"))
            };
            let real = |k: usize| -> Result<f64> {
                f.get(k)
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::parse(lineno, "bad real field"))
            };
            match f.first().copied() {
                Some("vertex") if f.len() == 4 => {
                    let i = num(1)?;
                    if i >= n {
                        return Err(Error::parse(lineno, "vertex index out of range"));
                    }
                    coords[i] = Some([real(2)?, real(3)?]);
                }
                Some("edge") if f.len() == 3 => edges.push((num(1)?, num(2)?)),
                _ => return Err(Error::parse(lineno, format!("unexpected record `{line}`"))),
            }
        }
        if edges.len() != m {
            return Err(Error::parse(1, "edge count does not match header"));
        }
        let coords: Option<Vec<_>> = coords.into_iter().collect();
        let coords = coords.ok_or_else(|| Error::parse(1, "missing vertex record"))?;
        Self::from_edges(coords, &edges)
    }
}

/// All-pairs shortest paths by edge length and by hop count (Floyd-Warshall).
/// `lengths[a][b]` is infinite for non-edges.
pub fn shortest_paths(lengths: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<u32>>) {
    let n = lengths.len();
    let mut dist = lengths.to_vec();
    let mut hops = vec![vec![u32::MAX; n]; n];
    for a in 0..n {
        dist[a][a] = 0.0;
        for b in 0..n {
            if a == b {
                hops[a][b] = 0;
            } else if lengths[a][b].is_finite() {
                hops[a][b] = 1;
            }
        }
    }
    for k in 0..n {
        for a in 0..n {
            for b in 0..n {
                let via = dist[a][k] + dist[k][b];
                if via < dist[a][b] {
                    dist[a][b] = via;
                }
                if hops[a][k] != u32::MAX && hops[k][b] != u32::MAX {
                    let h = hops[a][k] + hops[k][b];
                    if h < hops[a][b] {
                        hops[a][b] = h;
                    }
                }
            }
        }
    }
    (dist, hops)
}

// ---------------------------------------------------------------------------
// State and action
// ---------------------------------------------------------------------------

/// Equivalence class of jobs: current vertex, destination, epochs left until
/// the due date, and whether the agent is carrying them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JobType {
    pub at: usize,
    pub dest: usize,
    pub due: u32,
    pub carried: bool,
}

impl JobType {
    pub fn waiting(at: usize, dest: usize, due: u32) -> Self {
        Self {
            at,
            dest,
            due,
            carried: false,
        }
    }

    pub fn carried(at: usize, dest: usize, due: u32) -> Self {
        Self {
            at,
            dest,
            due,
            carried: true,
        }
    }
}

impl fmt::Display for JobType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}->{} due {}{}]",
            self.at,
            self.dest,
            self.due,
            if self.carried { " carried" } else { "" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub location: usize,
    inventory: BTreeMap<JobType, u32>,
}

impl State {
    pub fn empty(location: usize) -> Self {
        Self {
            location,
            inventory: BTreeMap::new(),
        }
    }

    pub fn with_jobs(location: usize, jobs: impl IntoIterator<Item = (JobType, u32)>) -> Self {
        let mut s = Self::empty(location);
        for (jt, k) in jobs {
            s.add(jt, k);
        }
        s
    }

    pub fn count(&self, jt: &JobType) -> u32 {
        self.inventory.get(jt).copied().unwrap_or(0)
    }

    pub fn add(&mut self, jt: JobType, k: u32) {
        if k > 0 {
            *self.inventory.entry(jt).or_insert(0) += k;
        }
    }

    /// Nonzero entries in ascending job-type order.
    pub fn jobs(&self) -> impl Iterator<Item = (&JobType, u32)> + '_ {
        self.inventory.iter().map(|(j, &k)| (j, k))
    }

    pub fn is_empty(&self) -> bool {
        self.inventory.is_empty()
    }

    pub fn carried_total(&self) -> u32 {
        self.jobs().filter(|(j, _)| j.carried).map(|(_, k)| k).sum()
    }

    pub fn waiting_at(&self, v: usize) -> u32 {
        self.jobs()
            .filter(|(j, _)| !j.carried && j.at == v)
            .map(|(_, k)| k)
            .sum()
    }

    pub fn total_jobs(&self) -> u32 {
        self.inventory.values().sum()
    }

    /// Checks the state invariants for the given instance.
    pub fn check(&self, cfg: &InstanceConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.location >= cfg.vertices {
            return bad(format!("agent location {} out of range", self.location));
        }
        for (j, _) in self.jobs() {
            if j.at >= cfg.vertices || j.dest >= cfg.vertices {
                return bad(format!("job {j} references unknown vertex"));
            }
            if j.carried && j.at != self.location {
                return bad(format!("carried job {j} is not at the agent location"));
            }
            if !j.carried && j.at == j.dest {
                return bad(format!("waiting job {j} is already at its destination"));
            }
            if j.due > cfg.max_due {
                return bad(format!("job {j} due beyond max_due"));
            }
        }
        if self.carried_total() > cfg.capacity {
            return bad("carried jobs exceed capacity".into());
        }
        for v in 0..cfg.vertices {
            if self.waiting_at(v) > cfg.accumulation_cap {
                return bad(format!("vertex {v} exceeds accumulation cap"));
            }
        }
        Ok(())
    }

    /// Text snapshot: `state <location> <records>` then one `job` line per type.
    pub fn to_text(&self) -> String {
        let mut s = format!("state {} {}\n", self.location, self.inventory.len());
        for (j, k) in self.jobs() {
            s.push_str(&format!(
                "job {} {} {} {} {}\n",
                j.at, j.dest, j.due, j.carried as u8, k
            ));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty state record"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "state" {
            return Err(Error::parse(1, "expected `state <location> <records>`"));
        }
        let location = h[1].parse().map_err(|_| Error::parse(1, "bad location"))?;
        let records: usize = h[2].parse().map_err(|_| Error::parse(1, "bad record count"))?;
        let mut s = State::empty(location);
        let mut seen = 0;
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(i + 1, format!("malformed job record `{line}`"));
            if f.len() != 6 || f[0] != "job" {
                return Err(bad());
            }
            let p = |k: usize| f[k].parse::<u64>().map_err(|_| bad());
            let carried = match p(4)? {
                0 => false,
                1 => true,
                _ => return Err(bad()),
            };
            let jt = JobType {
                at: p(1)? as usize,
                dest: p(2)? as usize,
                due: p(3)? as u32,
                carried,
            };
            s.add(jt, p(5)? as u32);
            seen += 1;
        }
        if seen != records {
            return Err(Error::parse(1, "record count does not match header"));
        }
        Ok(s)
    }
}

/// Next vertex plus load and unload counts per job type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub next: usize,
    pub loads: BTreeMap<JobType, u32>,
    pub unloads: BTreeMap<JobType, u32>,
}

impl Action {
    pub fn stay(location: usize) -> Self {
        Self::move_to(location)
    }

    pub fn move_to(next: usize) -> Self {
        Self {
            next,
            loads: BTreeMap::new(),
            unloads: BTreeMap::new(),
        }
    }

    pub fn load(mut self, jt: JobType, k: u32) -> Self {
        if k > 0 {
            *self.loads.entry(jt).or_insert(0) += k;
        }
        self
    }

    pub fn unload(mut self, jt: JobType, k: u32) -> Self {
        if k > 0 {
            *self.unloads.entry(jt).or_insert(0) += k;
        }
        self
    }

    pub fn loaded(&self) -> u32 {
        self.loads.values().sum()
    }

    pub fn unloaded(&self) -> u32 {
        self.unloads.values().sum()
    }
}

/// A broken action constraint.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Violation {
    #[error("next vertex {next} is neither the current vertex nor adjacent to it")]
    InvalidNextVertex { next: usize },
    #[error("(un)loading {job} away from the agent location")]
    NotAtLocation { job: JobType },
    #[error("loading {job}, which is not a waiting job")]
    LoadNotWaiting { job: JobType },
    #[error("unloading {job}, which is not carried")]
    UnloadNotCarried { job: JobType },
    #[error("{job}: requested {requested}, only {available} present")]
    ExceedsAvailable {
        job: JobType,
        requested: u32,
        available: u32,
    },
    #[error("loading {job}, whose due date has been reached")]
    ExpiredLoad { job: JobType },
    #[error("{job} is at its destination: {carried} carried, {unloaded} unloaded")]
    MissingForcedDelivery {
        job: JobType,
        carried: u32,
        unloaded: u32,
    },
    #[error("{job} reached its due date: {carried} carried, {unloaded} unloaded")]
    MissingForcedExpiry {
        job: JobType,
        carried: u32,
        unloaded: u32,
    },
    #[error("{carried} jobs carried after the action exceeds capacity {capacity}")]
    CapacityExceeded { carried: u32, capacity: u32 },
    #[error("{waiting} jobs waiting at vertex {vertex} exceeds the accumulation cap {cap}")]
    AccumulationExceeded { vertex: usize, waiting: u32, cap: u32 },
}

/// The deterministic effect of applying an action, before travel and arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct PostDecision {
    pub location: usize,
    pub next: usize,
    /// Jobs on board after (un)loading, keyed by `(dest, due)`.
    pub carried: BTreeMap<(usize, u32), u32>,
    /// Waiting jobs after (un)loading, including voluntarily unloaded ones.
    pub waiting: BTreeMap<JobType, u32>,
    pub delivered: u32,
    pub handled: u32,
    /// Jobs whose due date has been reached without delivery.
    pub expired: u32,
}

impl PostDecision {
    pub fn carried_total(&self) -> u32 {
        self.carried.values().sum()
    }
}

/// Breakdown of the direct reward into its five components (costs negative).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub delivery: f64,
    pub distance: f64,
    pub travel: f64,
    pub handling: f64,
    pub penalty: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.delivery + self.distance + self.travel + self.handling + self.penalty
    }
}

/// A configured problem instance: config, reward parameters, and the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub config: InstanceConfig,
    pub rewards: RewardParams,
    pub graph: Graph,
}

impl Instance {
    pub fn new(config: InstanceConfig, rewards: RewardParams) -> Result<Self> {
        config.validate()?;
        rewards.validate()?;
        let graph = Graph::for_config(&config)?;
        Ok(Self {
            config,
            rewards,
            graph,
        })
    }

    pub fn with_graph(config: InstanceConfig, rewards: RewardParams, graph: Graph) -> Result<Self> {
        config.validate()?;
        rewards.validate()?;
        if graph.len() != config.vertices {
            return Err(Error::shape(config.vertices, graph.len()));
        }
        Ok(Self {
            config,
            rewards,
            graph,
        })
    }

    /// Deterministic two-vertex shuttle: vertices one unit apart, exactly one
    /// job per vertex per epoch, unit capacity and accumulation, fixed due time.
    pub fn shuttle(rewards: RewardParams) -> Result<Self> {
        let config = InstanceConfig {
            vertices: 2,
            max_degree: 2,
            max_new_jobs: 1,
            accumulation_cap: 1,
            capacity: 1,
            min_due: 5,
            max_due: 5,
            discount: 0.9,
            seed: 0,
            arrivals: ArrivalLaw::Fixed,
            layout: GraphLayout::Line,
        };
        Self::new(config, rewards)
    }

    pub fn vertices(&self) -> usize {
        self.config.vertices
    }

    /// Stable hash of the graph, configuration and reward parameters.
    pub fn fingerprint(&self) -> String {
        let c = &self.config;
        let r = &self.rewards;
        let mut h = Sha256::new();
        h.update(self.graph.to_text().as_bytes());
        h.update(
            format!(
                "{} {} {} {} {} {} {} {:?} {:?} {:?}\n",
                c.vertices,
                c.max_degree,
                c.max_new_jobs,
                c.accumulation_cap,
                c.capacity,
                c.min_due,
                c.max_due,
                c.discount,
                c.arrivals,
                c.layout
            )
            .as_bytes(),
        );
        h.update(
            format!(
                "{:?} {:?} {:?} {:?} {:?}\n",
                r.delivery, r.distance, r.travel, r.handling, r.penalty
            )
            .as_bytes(),
        );
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Returns every broken action constraint (empty when feasible).
    pub fn validate_action(&self, s: &State, x: &Action) -> Vec<Violation> {
        let cfg = &self.config;
        let loc = s.location;
        let mut out = Vec::new();
        if x.next >= self.vertices() || (x.next != loc && !self.graph.is_adjacent(loc, x.next)) {
            out.push(Violation::InvalidNextVertex { next: x.next });
        }
        for (&job, &k) in &x.loads {
            if job.at != loc {
                out.push(Violation::NotAtLocation { job });
            }
            if job.carried {
                out.push(Violation::LoadNotWaiting { job });
            }
            if job.due == 0 && k > 0 {
                out.push(Violation::ExpiredLoad { job });
            }
            let available = s.count(&job);
            if k > available {
                out.push(Violation::ExceedsAvailable {
                    job,
                    requested: k,
                    available,
                });
            }
        }
        for (&job, &k) in &x.unloads {
            if job.at != loc {
                out.push(Violation::NotAtLocation { job });
            }
            if !job.carried {
                out.push(Violation::UnloadNotCarried { job });
            }
            let available = s.count(&job);
            if k > available {
                out.push(Violation::ExceedsAvailable {
                    job,
                    requested: k,
                    available,
                });
            }
        }
        for (&job, carried) in s.jobs().filter(|(j, _)| j.carried) {
            let unloaded = x.unloads.get(&job).copied().unwrap_or(0);
            if unloaded >= carried {
                continue;
            }
            if job.dest == loc {
                out.push(Violation::MissingForcedDelivery {
                    job,
                    carried,
                    unloaded,
                });
            } else if job.due == 0 {
                out.push(Violation::MissingForcedExpiry {
                    job,
                    carried,
                    unloaded,
                });
            }
        }
        let carried_after = (s.carried_total() + x.loaded()).saturating_sub(x.unloaded());
        if carried_after > cfg.capacity {
            out.push(Violation::CapacityExceeded {
                carried: carried_after,
                capacity: cfg.capacity,
            });
        }
        let returned: u32 = x
            .unloads
            .iter()
            .filter(|(j, _)| j.dest != loc && j.due > 0)
            .map(|(_, &k)| k)
            .sum();
        let waiting = (s.waiting_at(loc) + returned).saturating_sub(x.loaded());
        if waiting > cfg.accumulation_cap {
            out.push(Violation::AccumulationExceeded {
                vertex: loc,
                waiting,
                cap: cfg.accumulation_cap,
            });
        }
        out
    }

    pub fn check_action(&self, s: &State, x: &Action) -> Result<()> {
        let v = self.validate_action(s, x);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Infeasible(v))
        }
    }

    /// Applies loads and unloads. The action must be feasible.
    pub fn post_decision(&self, s: &State, x: &Action) -> Result<PostDecision> {
        self.check_action(s, x)?;
        let loc = s.location;
        let mut carried = BTreeMap::new();
        let mut waiting = BTreeMap::new();
        let mut delivered = 0;
        let mut expired = 0;
        for (&j, k) in s.jobs() {
            if j.carried {
                let unl = x.unloads.get(&j).copied().unwrap_or(0);
                let keep = k - unl;
                if keep > 0 {
                    *carried.entry((j.dest, j.due)).or_insert(0) += keep;
                }
                if unl > 0 {
                    if j.dest == loc {
                        delivered += unl;
                    } else if j.due == 0 {
                        expired += unl;
                    } else {
                        *waiting.entry(JobType::waiting(loc, j.dest, j.due)).or_insert(0) += unl;
                    }
                }
            } else {
                let ld = x.loads.get(&j).copied().unwrap_or(0);
                let stay = k - ld;
                if stay > 0 {
                    *waiting.entry(j).or_insert(0) += stay;
                }
                if ld > 0 {
                    *carried.entry((j.dest, j.due)).or_insert(0) += ld;
                }
                if j.due == 0 {
                    expired += stay;
                }
            }
        }
        Ok(PostDecision {
            location: loc,
            next: x.next,
            carried,
            waiting,
            delivered,
            handled: x.loaded() + x.unloaded(),
            expired,
        })
    }

    pub fn reward_breakdown(&self, s: &State, x: &Action) -> Result<RewardBreakdown> {
        let post = self.post_decision(s, x)?;
        let p = &self.rewards;
        let g = &self.graph;
        let loc = s.location;
        let progress: f64 = post
            .carried
            .iter()
            .map(|(&(dest, _), &k)| k as f64 * (g.dist(loc, dest) - g.dist(x.next, dest)))
            .sum();
        Ok(RewardBreakdown {
            delivery: p.delivery * post.delivered as f64,
            distance: p.distance * progress,
            travel: -p.travel * g.edge_length(loc, x.next),
            handling: -p.handling * post.handled as f64,
            penalty: -p.penalty * post.expired as f64,
        })
    }

    /// Direct reward `R(s, x)`.
    pub fn reward(&self, s: &State, x: &Action) -> Result<f64> {
        Ok(self.reward_breakdown(s, x)?.total())
    }

    /// The state after the action, before new jobs arrive.
    fn advance(&self, s: &State, x: &Action) -> Result<State> {
        let post = self.post_decision(s, x)?;
        let mut next = State::empty(x.next);
        for (&(dest, due), &k) in &post.carried {
            // Carried jobs with due 0 are always unloaded, so due >= 1 here.
            next.add(JobType::carried(x.next, dest, due - 1), k);
        }
        for (j, &k) in &post.waiting {
            if j.due > 0 {
                next.add(JobType::waiting(j.at, j.dest, j.due - 1), k);
            }
        }
        Ok(next)
    }

    /// Samples the successor state.
    pub fn transition<R: Rng + ?Sized>(&self, s: &State, x: &Action, rng: &mut R) -> Result<State> {
        let mut next = self.advance(s, x)?;
        self.arrivals(&mut next, rng);
        Ok(next)
    }

    /// Adds one epoch of random job arrivals to `s`.
    pub fn arrivals<R: Rng + ?Sized>(&self, s: &mut State, rng: &mut R) {
        let cfg = &self.config;
        let n = cfg.vertices;
        for v in 0..n {
            let count = match cfg.arrivals {
                ArrivalLaw::Uniform => rng.random_range(0..=cfg.max_new_jobs),
                ArrivalLaw::Fixed => cfg.max_new_jobs,
            };
            let mut waiting = s.waiting_at(v);
            for _ in 0..count {
                let mut dest = rng.random_range(0..n - 1);
                if dest >= v {
                    dest += 1;
                }
                let due = rng.random_range(cfg.min_due..=cfg.max_due);
                if waiting < cfg.accumulation_cap {
                    s.add(JobType::waiting(v, dest, due), 1);
                    waiting += 1;
                }
            }
        }
    }

    /// Exact successor distribution (for small instances).
    pub fn transition_distribution(&self, s: &State, x: &Action) -> Result<Vec<(State, f64)>> {
        let cfg = &self.config;
        let n = cfg.vertices;
        let base = self.advance(s, x)?;
        let mut dist: BTreeMap<State, f64> = BTreeMap::new();
        dist.insert(base, 1.0);
        let jobs: Vec<(usize, u32)> = (0..n)
            .flat_map(|d| (cfg.min_due..=cfg.max_due).map(move |t| (d, t)))
            .collect();
        for v in 0..n {
            let kinds: Vec<(usize, u32)> = jobs.iter().copied().filter(|&(d, _)| d != v).collect();
            let counts: Vec<u32> = match cfg.arrivals {
                ArrivalLaw::Uniform => (0..=cfg.max_new_jobs).collect(),
                ArrivalLaw::Fixed => vec![cfg.max_new_jobs],
            };
            let p_count = 1.0 / counts.len() as f64;
            let p_kind = 1.0 / kinds.len() as f64;
            let mut out: BTreeMap<State, f64> = BTreeMap::new();
            for (st, p) in &dist {
                for &c in &counts {
                    // Sequences of `c` arrivals; jobs beyond the cap are dropped.
                    let mut layer: BTreeMap<State, f64> = BTreeMap::new();
                    layer.insert(st.clone(), p * p_count);
                    for _ in 0..c {
                        let mut grown = BTreeMap::new();
                        for (st2, p2) in layer {
                            let full = st2.waiting_at(v) >= cfg.accumulation_cap;
                            for &(d, t) in &kinds {
                                let mut s3 = st2.clone();
                                if !full {
                                    s3.add(JobType::waiting(v, d, t), 1);
                                }
                                *grown.entry(s3).or_insert(0.0) += p2 * p_kind;
                            }
                        }
                        layer = grown;
                    }
                    for (st2, p2) in layer {
                        *out.entry(st2).or_insert(0.0) += p2;
                    }
                }
            }
            dist = out;
        }
        Ok(dist.into_iter().collect())
    }

    /// Agent at a uniformly random vertex, inventory from one round of arrivals.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let mut s = State::empty(rng.random_range(0..self.vertices()));
        self.arrivals(&mut s, rng);
        s
    }

    /// Exact distribution of [`Instance::initial_state`].
    pub fn initial_distribution(&self) -> Vec<(State, f64)> {
        let n = self.vertices();
        let mut out = Vec::new();
        for v in 0..n {
            // Staying put from an empty state reproduces exactly one arrival round.
            let dist = self
                .transition_distribution(&State::empty(v), &Action::stay(v))
                .expect("staying in an empty state is feasible");
            out.extend(dist.into_iter().map(|(s, p)| (s, p / n as f64)));
        }
        out
    }

    /// Forced unloads only, staying put. Always feasible.
    pub fn minimal_action(&self, s: &State) -> Action {
        let loc = s.location;
        let mut x = Action::stay(loc);
        for (&j, k) in s.jobs() {
            if j.carried && (j.dest == loc || j.due == 0) {
                x = x.unload(j, k);
            }
        }
        x
    }

    /// A random feasible action. Not uniform over the action set.
    pub fn random_action<R: Rng + ?Sized>(&self, s: &State, rng: &mut R) -> Action {
        let loc = s.location;
        let cands = self.graph.candidates(loc);
        let mut x = Action::move_to(cands[rng.random_range(0..cands.len())]);
        let mut carried = 0u32;
        for (&j, k) in s.jobs().filter(|(j, _)| j.carried) {
            let unl = if j.dest == loc || j.due == 0 {
                k
            } else {
                rng.random_range(0..=k)
            };
            x = x.unload(j, unl);
            carried += k - unl;
        }
        let mut room = self.config.capacity.saturating_sub(carried);
        for (&j, k) in s.jobs().filter(|(j, _)| !j.carried && j.at == loc && j.due > 0) {
            let ld = rng.random_range(0..=k.min(room));
            x = x.load(j, ld);
            room -= ld;
        }
        // Trim voluntary unloads until the accumulation cap holds.
        while !self.validate_action(s, &x).is_empty() {
            let vol = x
                .unloads
                .iter()
                .find(|(j, &k)| k > 0 && j.dest != loc && j.due > 0)
                .map(|(j, _)| *j);
            match vol {
                Some(j) => {
                    let e = x.unloads.get_mut(&j).expect("present");
                    *e -= 1;
                    if *e == 0 {
                        x.unloads.remove(&j);
                    }
                }
                None => return self.minimal_action(s),
            }
        }
        x
    }
}

/// Connectivity check by breadth-first search.
pub fn is_connected(g: &Graph) -> bool {
    let mut seen = vec![false; g.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in g.neighbors(v) {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        // a-b length 1, b-c length 2
        Graph::from_edges(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]], &[(0, 1), (1, 2)]).unwrap()
    }

    fn inst(n: usize) -> Instance {
        let cfg = InstanceConfig {
            vertices: n,
            ..Default::default()
        };
        Instance::new(cfg, RewardParams::default()).unwrap()
    }

    #[test]
    fn two_vertex_graph_is_single_edge() {
        let g = Graph::generate(1, 2, 2).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn generated_graph_respects_degree_and_connectivity() {
        for seed in 0..50 {
            let g = Graph::generate(seed, 5, 3).unwrap();
            assert!(is_connected(&g));
            assert!((0..5).all(|v| g.degree(v) <= 3));
            assert_eq!(g, Graph::generate(seed, 5, 3).unwrap());
        }
    }

    #[test]
    fn rejects_small_degree_cap() {
        assert!(Graph::generate(1, 4, 1).is_err());
    }

    #[test]
    fn path_distances() {
        let g = path3();
        assert_eq!(g.dist(0, 2), 3.0);
        assert_eq!(g.hops(0, 2), 2);
        assert!((0..3).all(|v| g.dist(v, v) == 0.0 && g.hops(v, v) == 0));
        assert_eq!(g.next_hop(0, 2), 1);
    }

    #[test]
    fn graph_text_round_trip() {
        let g = Graph::generate(7, 5, 3).unwrap();
        assert_eq!(Graph::from_text(&g.to_text()).unwrap(), g);
        assert!(Graph::from_text("graph 2 1\nvertex 0 0 0\n").is_err());
    }

    #[test]
    fn state_text_round_trip() {
        let s = State::with_jobs(
            1,
            [
                (JobType::carried(1, 2, 3), 2),
                (JobType::waiting(0, 1, 5), 4),
            ],
        );
        assert_eq!(State::from_text(&s.to_text()).unwrap(), s);
        assert!(State::from_text("state 0 1\njob 0 1 2 7 1\n").is_err());
    }

    #[test]
    fn empty_stay_has_zero_reward() {
        let i = inst(5);
        assert_eq!(i.reward(&State::empty(0), &Action::stay(0)).unwrap(), 0.0);
    }

    #[test]
    fn load_away_from_location_is_rejected() {
        let i = inst(5);
        let job = JobType::waiting(1, 2, 4);
        let s = State::with_jobs(0, [(job, 1)]);
        let v = i.validate_action(&s, &Action::stay(0).load(job, 1));
        assert!(v.contains(&Violation::NotAtLocation { job }));
    }

    #[test]
    fn forced_delivery_must_be_unloaded() {
        let i = inst(5);
        let job = JobType::carried(2, 2, 4);
        let s = State::with_jobs(2, [(job, 1)]);
        let v = i.validate_action(&s, &Action::stay(2));
        assert!(matches!(v[0], Violation::MissingForcedDelivery { .. }));
        assert!(i.validate_action(&s, &Action::stay(2).unload(job, 1)).is_empty());
    }

    #[test]
    fn capacity_boundary() {
        let i = inst(5);
        let q = i.config.capacity;
        let job = JobType::waiting(0, 1, 4);
        let s = State::with_jobs(0, [(job, q + 1)]);
        assert!(i.validate_action(&s, &Action::stay(0).load(job, q)).is_empty());
        let v = i.validate_action(&s, &Action::stay(0).load(job, q + 1));
        assert_eq!(
            v,
            vec![Violation::CapacityExceeded {
                carried: q + 1,
                capacity: q
            }]
        );
    }

    #[test]
    fn single_decrement_on_move() {
        let i = inst(5);
        let to = i.graph.neighbors(0)[0];
        let dest = (0..5).find(|&d| d != 0 && d != to).unwrap();
        let s = State::with_jobs(0, [(JobType::carried(0, dest, 3), 1)]);
        let mut cfg = i.config.clone();
        cfg.max_new_jobs = 0;
        let quiet = Instance::with_graph(cfg, i.rewards, i.graph.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = quiet.transition(&s, &Action::move_to(to), &mut rng).unwrap();
        assert_eq!(next, State::with_jobs(to, [(JobType::carried(to, dest, 2), 1)]));
    }

    #[test]
    fn null_dynamics() {
        let mut cfg = InstanceConfig::default();
        cfg.max_new_jobs = 0;
        let i = Instance::new(cfg, RewardParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = State::empty(2);
        assert_eq!(i.transition(&s, &Action::stay(2), &mut rng).unwrap(), s);
    }

    #[test]
    fn expired_jobs_are_penalized_then_removed() {
        let mut cfg = InstanceConfig::default();
        cfg.max_new_jobs = 0;
        let i = Instance::new(cfg, RewardParams::default()).unwrap();
        let s = State::with_jobs(0, [(JobType::waiting(1, 2, 0), 2)]);
        let r = i.reward_breakdown(&s, &Action::stay(0)).unwrap();
        assert_eq!(r.penalty, -20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(i.transition(&s, &Action::stay(0), &mut rng).unwrap().is_empty());
    }

    #[test]
    fn voluntary_unload_waits_at_current_vertex() {
        let mut cfg = InstanceConfig::default();
        cfg.max_new_jobs = 0;
        let i = Instance::new(cfg, RewardParams::default()).unwrap();
        let to = i.graph.neighbors(0)[0];
        let job = JobType::carried(0, 3, 4);
        let s = State::with_jobs(0, [(job, 2)]);
        let x = Action::move_to(to).unload(job, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = i.transition(&s, &x, &mut rng).unwrap();
        assert_eq!(next.count(&JobType::waiting(0, 3, 3)), 1);
        assert_eq!(next.count(&JobType::carried(to, 3, 3)), 1);
    }

    #[test]
    fn minimal_and_random_actions_are_feasible() {
        let i = inst(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = i.initial_state(&mut rng);
        for _ in 0..300 {
            assert!(i.validate_action(&s, &i.minimal_action(&s)).is_empty());
            let x = i.random_action(&s, &mut rng);
            assert!(i.validate_action(&s, &x).is_empty(), "{x:?}");
            s = i.transition(&s, &x, &mut rng).unwrap();
            s.check(&i.config).unwrap();
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        let cfg = InstanceConfig {
            vertices: 3,
            max_new_jobs: 2,
            accumulation_cap: 2,
            capacity: 2,
            min_due: 1,
            max_due: 2,
            ..Default::default()
        };
        let i = Instance::new(cfg, RewardParams::default()).unwrap();
        let total: f64 = i.initial_distribution().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(inst(5).fingerprint(), inst(5).fingerprint());
        assert_ne!(inst(5).fingerprint(), inst(4).fingerprint());
    }
}
