//! Gain networks: interconnection digraph, per-edge gains and per-node
//! monotone aggregation functions (MAFs).

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinfty::{envelope, GainDescriptor, KFun, KFunError, MonotoneSamples, Side, DEFAULT_FAMILY_POINTS};

/// Default discretization range for nonlinear gain families.
pub const DEFAULT_RANGE: (f64, f64) = (1e-3, 1e3);

const MAF_VALIDATION_PAIRS: usize = 200;
const XI_VALIDATION_SAMPLES: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("edge {from} -> {to}: node index out of range for {n} nodes")]
    NodeOutOfRange { from: usize, to: usize, n: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("gain on edge {from} -> {to}: {source}")]
    Gain { from: usize, to: usize, source: KFunError },
    #[error("expected {expected} MAFs, got {got}")]
    MafCount { expected: usize, got: usize },
    #[error("MAF at node {node} violates {property}: {detail}")]
    MafViolation { node: usize, property: &'static str, detail: String },
    #[error("sum aggregation over a template with unbounded in-degree is not equicontinuous")]
    UnboundedSumDegree,
    #[error("network has no nodes")]
    Empty,
    #[error("node count required (no 'nodes' field and no override)")]
    MissingNodeCount,
    #[error("node subset contains invalid or repeated index {0}")]
    BadSubset(usize),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("finite-case bound failed: {0}")]
    Xi(String),
    #[error(transparent)]
    KFun(#[from] KFunError),
}

/// Inner aggregation used by parametrized custom MAFs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Max,
    Sum,
    Pnorm(f64),
}

impl Aggregate {
    fn eval(self, v: &[f64]) -> f64 {
        match self {
            Aggregate::Max => v.iter().copied().fold(0.0, f64::max),
            Aggregate::Sum => v.iter().sum(),
            Aggregate::Pnorm(p) => v.iter().map(|x| x.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

pub type MafClosure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Evaluation rule of a custom MAF.
#[derive(Clone)]
pub enum CustomRule {
    /// `μ(v) = outer(aggregate(v))`.
    Composite { aggregate: Aggregate, outer: KFun },
    Closure(MafClosure),
}

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CustomRule::Composite { aggregate, outer } => write!(f, "Composite({aggregate:?}, {outer:?})"),
            CustomRule::Closure(_) => write!(f, "Closure"),
        }
    }
}

/// Custom MAF with a declared uniform-continuity modulus and lower bound `ξ`.
#[derive(Debug, Clone)]
pub struct CustomMaf {
    pub rule: CustomRule,
    /// `|μ(s) − μ(t)| ≤ modulus(‖s − t‖)`.
    pub modulus: KFun,
    /// `μ(s) ≥ ξ(‖s‖)`.
    pub xi: KFun,
    /// Sup-norm radius of the sampled validation region.
    pub validation_radius: f64,
}

/// Monotone aggregation function at one node.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Maf {
    Max,
    Sum,
    Custom(CustomMaf),
}

impl Maf {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            Maf::Max => v.iter().copied().fold(0.0, f64::max),
            Maf::Sum => v.iter().sum(),
            Maf::Custom(c) => match &c.rule {
                CustomRule::Composite { aggregate, outer } => outer.eval(aggregate.eval(v).max(0.0)),
                CustomRule::Closure(f) => f(v),
            },
        }
    }

    pub fn xi(&self) -> KFun {
        match self {
            Maf::Max | Maf::Sum => KFun::identity(),
            Maf::Custom(c) => c.xi.clone(),
        }
    }

    /// Modulus for inputs of length `deg` under the sup-norm.
    pub fn modulus(&self, deg: usize) -> KFun {
        match self {
            Maf::Max => KFun::identity(),
            Maf::Sum => KFun::linear(deg.max(1) as f64).expect("positive"),
            Maf::Custom(c) => c.modulus.clone(),
        }
    }

    pub fn kind(&self) -> MafKind {
        match self {
            Maf::Max => MafKind::Max,
            Maf::Sum => MafKind::Sum,
            Maf::Custom(_) => MafKind::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MafKind {
    Max,
    Sum,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Nodes with a path into `i`.
    In,
    /// Nodes reachable from `i`.
    Out,
}

/// Directed graph stored as sorted in-neighbor lists; edge `j → i` means `j ∈ I_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    in_nbrs: Vec<Vec<usize>>,
    out_nbrs: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, NetworkError> {
        let mut in_nbrs = vec![Vec::new(); n];
        let mut out_nbrs = vec![Vec::new(); n];
        for &(from, to) in edges {
            if from >= n || to >= n {
                return Err(NetworkError::NodeOutOfRange { from, to, n });
            }
            if from == to {
                return Err(NetworkError::SelfLoop(from));
            }
            in_nbrs[to].push(from);
            out_nbrs[from].push(to);
        }
        for (to, l) in in_nbrs.iter_mut().enumerate() {
            l.sort_unstable();
            if let Some(w) = l.windows(2).find(|w| w[0] == w[1]) {
                return Err(NetworkError::DuplicateEdge { from: w[0], to });
            }
        }
        out_nbrs.iter_mut().for_each(|l| l.sort_unstable());
        Ok(Digraph { in_nbrs, out_nbrs })
    }

    pub fn node_count(&self) -> usize {
        self.in_nbrs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.in_nbrs.iter().map(Vec::len).sum()
    }

    /// `I_i`.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_nbrs[i]
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_nbrs[i]
    }

    pub fn max_in_degree(&self) -> usize {
        self.in_nbrs.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Edges `(from, to)` ordered by target, then source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.in_nbrs.iter().enumerate().flat_map(|(to, l)| l.iter().map(move |&from| (from, to)))
    }

    /// Breadth-first distances from `i` along `dir`, up to `max_depth`, as `(node, depth)`.
    pub fn distances(&self, i: usize, max_depth: usize, dir: Direction) -> Vec<(usize, usize)> {
        let adj = match dir {
            Direction::In => &self.in_nbrs,
            Direction::Out => &self.out_nbrs,
        };
        let mut depth = vec![usize::MAX; self.node_count()];
        let mut out = vec![(i, 0)];
        let mut queue = VecDeque::from([i]);
        depth[i] = 0;
        while let Some(v) = queue.pop_front() {
            if depth[v] == max_depth {
                continue;
            }
            for &w in &adj[v] {
                if depth[w] == usize::MAX {
                    depth[w] = depth[v] + 1;
                    out.push((w, depth[w]));
                    queue.push_back(w);
                }
            }
        }
        out
    }

    /// `N⁻_i(n)` (or `N⁺_i(n)`): nodes within `n` steps, including `i`, sorted.
    pub fn neighborhood(&self, i: usize, n: usize, dir: Direction) -> Vec<usize> {
        let mut v: Vec<usize> = self.distances(i, n, dir).into_iter().map(|(j, _)| j).collect();
        v.sort_unstable();
        v
    }

    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let mut g = DiGraph::<(), ()>::with_capacity(self.node_count(), self.edge_count());
        let ids: Vec<_> = (0..self.node_count()).map(|_| g.add_node(())).collect();
        for (from, to) in self.edges() {
            g.add_edge(ids[from], ids[to], ());
        }
        let mut comps: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut c: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
                c.sort_unstable();
                c
            })
            .collect();
        comps.sort();
        comps
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.node_count() > 0 && self.distances(0, usize::MAX, Direction::In).len() == self.node_count()
            && self.distances(0, usize::MAX, Direction::Out).len() == self.node_count()
    }

    /// Largest shortest-path distance, if strongly connected.
    pub fn diameter(&self) -> Option<usize> {
        if !self.is_strongly_connected() {
            return None;
        }
        (0..self.node_count())
            .map(|i| self.distances(i, usize::MAX, Direction::Out).iter().map(|&(_, d)| d).max().unwrap_or(0))
            .max()
    }

    /// Simple cycles as node sequences `v0 → v1 → … → v0`, each listed once
    /// starting at its smallest node. Stops after `budget` cycles; the flag
    /// reports whether enumeration finished.
    pub fn simple_cycles(&self, budget: usize) -> (Vec<Vec<usize>>, bool) {
        let n = self.node_count();
        let mut cycles = Vec::new();
        let mut on_path = vec![false; n];
        for start in 0..n {
            let mut path = vec![start];
            on_path[start] = true;
            // stack of (node, next out-neighbor position)
            let mut stack = vec![(start, 0usize)];
            while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
                let nbrs = &self.out_nbrs[v];
                if *pos < nbrs.len() {
                    let w = nbrs[*pos];
                    *pos += 1;
                    if w == start {
                        if cycles.len() == budget {
                            return (cycles, false);
                        }
                        cycles.push(path.clone());
                    } else if w > start && !on_path[w] {
                        on_path[w] = true;
                        path.push(w);
                        stack.push((w, 0));
                    }
                } else {
                    stack.pop();
                    on_path[path.pop().unwrap()] = false;
                }
            }
        }
        (cycles, true)
    }
}

/// Finite network: graph, gains `γ_ij` aligned with `I_i`, and MAFs `μ_i`.
#[derive(Debug, Clone)]
pub struct GainNetwork {
    graph: Digraph,
    gains: Vec<Vec<KFun>>,
    mafs: Vec<Maf>,
    eta: Option<KFun>,
    xi: KFun,
    discretization_error: f64,
}

impl GainNetwork {
    /// Builds from `(from, to, gain)` triples and one MAF per node (or a single shared MAF).
    pub fn new(n: usize, edges: Vec<(usize, usize, KFun)>, mafs: Vec<Maf>) -> Result<Self, NetworkError> {
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        let mafs = match mafs.len() {
            1 => vec![mafs[0].clone(); n],
            m if m == n => mafs,
            m => return Err(NetworkError::MafCount { expected: n, got: m }),
        };
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.0, e.1)).collect();
        let graph = Digraph::new(n, &pairs)?;
        let mut slots: Vec<Vec<(usize, KFun)>> = vec![Vec::new(); n];
        for (from, to, g) in edges {
            slots[to].push((from, g));
        }
        let gains: Vec<Vec<KFun>> = slots
            .into_iter()
            .map(|mut l| {
                l.sort_by_key(|e| e.0);
                l.into_iter().map(|e| e.1).collect()
            })
            .collect();
        for (i, m) in mafs.iter().enumerate() {
            if let Maf::Custom(c) = m {
                validate_custom(i, c, graph.in_neighbors(i).len())?;
            }
        }
        let eta = gains.iter().flatten().cloned().reduce(|a, b| a.min(&b));
        let xi = mafs.iter().map(Maf::xi).reduce(|a, b| a.min(&b)).unwrap_or_else(KFun::identity);
        Ok(GainNetwork { graph, gains, mafs, eta, xi, discretization_error: 0.0 })
    }

    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Gains into node `i`, aligned with `graph().in_neighbors(i)`.
    pub fn gains_into(&self, i: usize) -> &[KFun] {
        &self.gains[i]
    }

    pub fn gain(&self, from: usize, to: usize) -> Option<&KFun> {
        let k = self.graph.in_neighbors(to).binary_search(&from).ok()?;
        Some(&self.gains[to][k])
    }

    pub fn maf(&self, i: usize) -> &Maf {
        &self.mafs[i]
    }

    /// Common MAF kind, if all nodes agree.
    pub fn maf_kind(&self) -> Option<MafKind> {
        let k = self.mafs[0].kind();
        self.mafs.iter().all(|m| m.kind() == k).then_some(k)
    }

    pub fn is_max_type(&self) -> bool {
        self.maf_kind() == Some(MafKind::Max)
    }

    /// All MAFs are max or sum and all gains linear, so `Γ` is positively homogeneous.
    pub fn is_homogeneous(&self) -> bool {
        self.mafs.iter().all(|m| matches!(m, Maf::Max | Maf::Sum)) && self.gains.iter().flatten().all(KFun::is_linear)
    }

    /// Pointwise minimum `η` of all gains; `None` without edges.
    pub fn eta(&self) -> Option<&KFun> {
        self.eta.as_ref()
    }

    /// Pointwise minimum of the MAF lower bounds `ξ_i`.
    pub fn xi(&self) -> &KFun {
        &self.xi
    }

    /// Largest relative error from discretizing named gain families.
    pub fn discretization_error(&self) -> f64 {
        self.discretization_error
    }

    /// Modulus `ω` with `‖Γ(s) − Γ(t)‖ ≤ ω(‖s − t‖)`, from gain slopes and MAF moduli.
    pub fn operator_modulus(&self) -> KFun {
        (0..self.node_count())
            .filter(|&i| !self.gains[i].is_empty())
            .map(|i| {
                let lip = self.gains[i].iter().map(KFun::max_slope).fold(0.0, f64::max);
                let deg = self.gains[i].len();
                self.mafs[i].modulus(deg).compose(&KFun::linear(lip).expect("positive slope"))
            })
            .reduce(|a, b| a.max(&b))
            .unwrap_or_else(KFun::identity)
    }

    /// Network on `J` with gains and MAFs inherited; entries of the result
    /// refer to positions in the sorted `J`.
    pub fn subnetwork(&self, nodes: &[usize]) -> Result<(GainNetwork, Vec<usize>), NetworkError> {
        let mut j: Vec<usize> = nodes.to_vec();
        j.sort_unstable();
        if let Some(w) = j.windows(2).find(|w| w[0] == w[1]) {
            return Err(NetworkError::BadSubset(w[0]));
        }
        if let Some(&bad) = j.iter().find(|&&x| x >= self.node_count()) {
            return Err(NetworkError::BadSubset(bad));
        }
        if j.is_empty() {
            return Err(NetworkError::Empty);
        }
        let pos = |x: usize| j.binary_search(&x).ok();
        let mut edges = Vec::new();
        for (new_to, &to) in j.iter().enumerate() {
            for (k, &from) in self.graph.in_neighbors(to).iter().enumerate() {
                if let Some(new_from) = pos(from) {
                    edges.push((new_from, new_to, self.gains[to][k].clone()));
                }
            }
        }
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.0, e.1)).collect();
        let graph = Digraph::new(j.len(), &pairs)?;
        let mut gains: Vec<Vec<KFun>> = vec![Vec::new(); j.len()];
        let mut sorted = edges;
        sorted.sort_by_key(|e| (e.1, e.0));
        for (_, to, g) in sorted {
            gains[to].push(g);
        }
        let mafs = j.iter().map(|&i| self.mafs[i].clone()).collect();
        let net = GainNetwork {
            graph,
            gains,
            mafs,
            eta: self.eta.clone(),
            xi: self.xi.clone(),
            discretization_error: self.discretization_error,
        };
        Ok((net, j))
    }

    /// `ξ̃(r) = min_{i,j} μ_i(r·e^j)` on a log grid over `range`, fitted from below,
    /// then checked against `μ_i(s) ≥ ξ̃(‖s‖)` on random samples.
    pub fn finite_xi(&self, range: (f64, f64)) -> Result<KFun, NetworkError> {
        let (lo, hi) = range;
        let rs: Vec<f64> = (0..DEFAULT_FAMILY_POINTS)
            .map(|k| lo * ((hi / lo).ln() * k as f64 / (DEFAULT_FAMILY_POINTS - 1) as f64).exp())
            .collect();
        let zs: Vec<f64> = rs
            .iter()
            .map(|&r| {
                (0..self.node_count())
                    .flat_map(|i| {
                        let d = self.graph.in_neighbors(i).len().max(1);
                        (0..d).map(move |j| {
                            let mut v = vec![0.0; d];
                            v[j] = r;
                            self.mafs[i].eval(&v)
                        })
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        if let Some(k) = zs.iter().position(|&z| !(z > 0.0)) {
            return Err(NetworkError::Xi(format!("μ vanishes on a unit bump at r = {}", rs[k])));
        }
        let interp = envelope(&MonotoneSamples::lower_hull(rs.clone(), zs.clone())?, Side::Below)?;
        if self.xi_holds(&interp, range).is_ok() {
            return Ok(interp);
        }
        // μ non-decreasing: on [r_k, r_{k+1}] it stays above z_k, so shift samples one grid step right
        let n = rs.len();
        let xi = envelope(&MonotoneSamples::lower_hull(rs[1..].to_vec(), zs[..n - 1].to_vec())?, Side::Below)?;
        self.xi_holds(&xi, range)?;
        Ok(xi)
    }
}

impl GainNetwork {
    fn xi_holds(&self, xi: &KFun, (lo, hi): (f64, f64)) -> Result<(), NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..XI_VALIDATION_SAMPLES {
            let i = rng.random_range(0..self.node_count());
            let d = self.graph.in_neighbors(i).len().max(1);
            let v: Vec<f64> = (0..d).map(|_| lo * (hi / lo).powf(rng.random::<f64>())).collect();
            let norm = v.iter().copied().fold(0.0, f64::max);
            if self.mafs[i].eval(&v) < xi.eval(norm) * (1.0 - 1e-9) {
                return Err(NetworkError::Xi(format!("μ_{i}({v:?}) below ξ̃({norm})")));
            }
        }
        Ok(())
    }
}

fn validate_custom(node: usize, c: &CustomMaf, deg: usize) -> Result<(), NetworkError> {
    let viol = |property, detail: String| NetworkError::MafViolation { node, property, detail };
    let mu = |v: &[f64]| Maf::Custom(c.clone()).eval(v);
    let d = deg.max(1);
    if mu(&vec![0.0; d]) != 0.0 {
        return Err(viol("μ(0) = 0", format!("μ(0) = {}", mu(&vec![0.0; d]))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(node as u64);
    let rad = c.validation_radius;
    for _ in 0..MAF_VALIDATION_PAIRS {
        let s: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * rad).collect();
        let t: Vec<f64> = s.iter().map(|x| x + rng.random::<f64>() * rad * 0.5).collect();
        let (ms, mt) = (mu(&s), mu(&t));
        if !(ms.is_finite() && mt.is_finite()) {
            return Err(viol("finiteness", format!("μ({s:?}) = {ms}")));
        }
        if ms > mt + 1e-12 * mt.abs().max(1.0) {
            return Err(viol("monotonicity", format!("μ({s:?}) = {ms} > μ({t:?}) = {mt}")));
        }
        let gap = t.iter().zip(&s).map(|(a, b)| a - b).fold(0.0, f64::max);
        if mt - ms > c.modulus.eval(gap) * (1.0 + 1e-9) + 1e-12 {
            return Err(viol("declared modulus", format!("|μ(t) − μ(s)| = {} > ω({gap})", mt - ms)));
        }
        let norm = s.iter().copied().fold(0.0, f64::max);
        if ms < c.xi.eval(norm) * (1.0 - 1e-9) {
            return Err(viol("declared ξ bound", format!("μ({s:?}) = {ms} < ξ({norm})")));
        }
        if norm > 0.0 && ms <= 0.0 {
            return Err(viol("positivity", format!("μ({s:?}) = 0")));
        }
    }
    Ok(())
}

/// MAF as written in a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MafSpec {
    Named(NamedMaf),
    Custom(CustomMafSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedMaf {
    Max,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomMafSpec {
    #[serde(rename = "type")]
    pub kind: CustomTag,
    pub aggregate: Aggregate,
    pub outer: GainDescriptor,
    pub modulus: GainDescriptor,
    pub xi: GainDescriptor,
    #[serde(default = "default_radius")]
    pub validation_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CustomTag {
    Custom,
}

fn default_radius() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MafField {
    Shared(MafSpec),
    PerNode(Vec<MafSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub gain: GainDescriptor,
}

/// Generator for a family of truncated networks indexed by size `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruncationTemplate {
    /// `I_i = {i + o : o ∈ offsets} ∩ [0, N)`; `gains` (if given) aligns with `offsets`.
    Offsets { offsets: Vec<i64>, gain: GainDescriptor, gains: Option<Vec<GainDescriptor>> },
    /// `I_i = {0, …, i − 1}`; in-degree grows without bound in `N`.
    AllPredecessors { gain: GainDescriptor },
}

impl TruncationTemplate {
    pub fn has_bounded_degree(&self) -> bool {
        matches!(self, TruncationTemplate::Offsets { .. })
    }

    pub fn edges(&self, n: usize) -> Vec<EdgeSpec> {
        let mut out = Vec::new();
        match self {
            TruncationTemplate::Offsets { offsets, gain, gains } => {
                for i in 0..n {
                    for (k, &o) in offsets.iter().enumerate() {
                        let j = i as i64 + o;
                        if o != 0 && j >= 0 && (j as usize) < n {
                            let g = gains.as_ref().and_then(|g| g.get(k)).unwrap_or(gain);
                            out.push(EdgeSpec { from: j as usize, to: i, gain: g.clone() });
                        }
                    }
                }
            }
            TruncationTemplate::AllPredecessors { gain } => {
                for i in 0..n {
                    for j in 0..i {
                        out.push(EdgeSpec { from: j, to: i, gain: gain.clone() });
                    }
                }
            }
        }
        out
    }
}

/// Network file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    pub maf: MafField,
    #[serde(default)]
    pub template: Option<TruncationTemplate>,
    /// Discretization range for nonlinear gain families.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

impl NetworkSpec {
    /// Instantiates the network; `n_override` replaces `nodes` (used for template sweeps).
    pub fn build(&self, n_override: Option<usize>) -> Result<GainNetwork, NetworkError> {
        let n = n_override.or(self.nodes).ok_or(NetworkError::MissingNodeCount)?;
        let range = self.range.map(|r| (r[0], r[1])).unwrap_or(DEFAULT_RANGE);
        let maf_specs: Vec<&MafSpec> = match &self.maf {
            MafField::Shared(m) => vec![m],
            MafField::PerNode(v) => v.iter().collect(),
        };
        if let Some(t) = &self.template {
            if !t.has_bounded_degree() && maf_specs.iter().any(|m| matches!(m, MafSpec::Named(NamedMaf::Sum))) {
                return Err(NetworkError::UnboundedSumDegree);
            }
        }
        let mafs = maf_specs.into_iter().map(|m| build_maf(m, range)).collect::<Result<Vec<_>, _>>()?;
        let mut specs: Vec<EdgeSpec> = self.template.as_ref().map(|t| t.edges(n)).unwrap_or_default();
        specs.extend(self.edges.iter().cloned());
        let mut err: f64 = 0.0;
        let mut edges = Vec::with_capacity(specs.len());
        for e in specs {
            let d = e
                .gain
                .discretize(range, DEFAULT_FAMILY_POINTS)
                .map_err(|source| NetworkError::Gain { from: e.from, to: e.to, source })?;
            err = err.max(d.max_rel_error);
            edges.push((e.from, e.to, d.function));
        }
        let mut net = GainNetwork::new(n, edges, mafs)?;
        net.discretization_error = err;
        Ok(net)
    }
}

fn build_maf(m: &MafSpec, range: (f64, f64)) -> Result<Maf, NetworkError> {
    Ok(match m {
        MafSpec::Named(NamedMaf::Max) => Maf::Max,
        MafSpec::Named(NamedMaf::Sum) => Maf::Sum,
        MafSpec::Custom(c) => {
            let f = |d: &GainDescriptor| d.discretize(range, DEFAULT_FAMILY_POINTS).map(|x| x.function);
            Maf::Custom(CustomMaf {
                rule: CustomRule::Composite { aggregate: c.aggregate, outer: f(&c.outer)? },
                modulus: f(&c.modulus)?,
                xi: f(&c.xi)?,
                validation_radius: c.validation_radius,
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lin(k: f64) -> KFun {
        KFun::linear(k).unwrap()
    }

    fn net_a() -> GainNetwork {
        GainNetwork::new(2, vec![(0, 1, lin(0.5)), (1, 0, lin(0.5))], vec![Maf::Max]).unwrap()
    }

    fn chain_spec() -> NetworkSpec {
        serde_json::from_str(
            r#"{"nodes":10,"maf":"sum","template":{"kind":"offsets","offsets":[-1,1],"gain":{"type":"linear","k":0.25}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn builds_net_a() {
        let net = net_a();
        assert_eq!(net.graph().edge_count(), 2);
        assert_eq!(net.eta().unwrap().eval(1.0), 0.5);
        assert_eq!(net.xi(), &KFun::identity());
        assert!(net.is_max_type() && net.is_homogeneous());
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(
            GainNetwork::new(2, vec![(0, 0, lin(1.0))], vec![Maf::Max]),
            Err(NetworkError::SelfLoop(0))
        ));
        assert!(matches!(
            GainNetwork::new(2, vec![(0, 1, lin(1.0)), (0, 1, lin(2.0))], vec![Maf::Max]),
            Err(NetworkError::DuplicateEdge { from: 0, to: 1 })
        ));
        assert!(matches!(
            GainNetwork::new(2, vec![(0, 5, lin(1.0))], vec![Maf::Max]),
            Err(NetworkError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn chain_template_counts_edges() {
        let net = chain_spec().build(None).unwrap();
        assert_eq!(net.graph().edge_count(), 18);
        assert_eq!(net.graph().in_neighbors(0), &[1]);
        assert_eq!(net.graph().in_neighbors(5), &[4, 6]);
        assert_eq!(chain_spec().build(Some(100)).unwrap().graph().edge_count(), 198);
    }

    #[test]
    fn unbounded_sum_template_rejected() {
        let spec: NetworkSpec = serde_json::from_str(
            r#"{"nodes":5,"maf":"sum","template":{"kind":"all_predecessors","gain":{"type":"linear","k":0.1}}}"#,
        )
        .unwrap();
        assert_eq!(spec.build(None).unwrap_err(), NetworkError::UnboundedSumDegree);
    }

    #[test]
    fn neighborhoods() {
        let net = chain_spec().build(None).unwrap();
        assert_eq!(net.graph().neighborhood(5, 2, Direction::In), vec![3, 4, 5, 6, 7]);
        assert_eq!(net.graph().neighborhood(0, 0, Direction::In), vec![0]);
        let ring = Digraph::new(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(ring.neighborhood(0, 1, Direction::In), vec![0, 2]);
        assert_eq!(ring.neighborhood(0, 1, Direction::Out), vec![0, 1]);
        assert_eq!(ring.diameter(), Some(2));
    }

    #[test]
    fn subnetwork_restricts() {
        let net = chain_spec().build(None).unwrap();
        let (sub, ids) = net.subnetwork(&[3, 4, 5]).unwrap();
        assert_eq!(ids, vec![3, 4, 5]);
        assert_eq!(sub.graph().edge_count(), 4);
        let (all, _) = net.subnetwork(&(0..10).collect::<Vec<_>>()).unwrap();
        assert_eq!(all.graph(), net.graph());
        assert!(net.subnetwork(&[1, 1]).is_err());
    }

    #[test]
    fn finite_xi_examples() {
        assert_eq!(net_a().finite_xi(DEFAULT_RANGE).unwrap(), KFun::identity());
        let sq: MafClosure = Arc::new(|v: &[f64]| v.iter().copied().fold(0.0, f64::max).powi(2));
        let maf = Maf::Custom(CustomMaf {
            rule: CustomRule::Closure(sq),
            modulus: lin(6.0),
            xi: KFun::new(vec![(0.0, 0.0), (1.0, 1e-6)], 1e-6).unwrap(),
            validation_radius: 2.0,
        });
        let net = GainNetwork::new(2, vec![(0, 1, lin(0.5)), (1, 0, lin(0.5))], vec![maf]).unwrap();
        let xi = net.finite_xi((1e-2, 2.0)).unwrap();
        for r in [0.01, 0.1, 0.5, 1.0, 2.0] {
            assert!(xi.eval(r) <= r * r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn custom_maf_violations_rejected() {
        let bad: MafClosure = Arc::new(|v: &[f64]| {
            let mx = v.iter().copied().fold(0.0, f64::max);
            let mn = v.iter().copied().fold(f64::INFINITY, f64::min);
            mx - 0.9 * mn
        });
        let maf = Maf::Custom(CustomMaf { rule: CustomRule::Closure(bad), modulus: lin(2.0), xi: lin(0.01), validation_radius: 1.0 });
        let err = GainNetwork::new(3, vec![(0, 2, lin(1.0)), (1, 2, lin(1.0))], vec![maf]).unwrap_err();
        assert!(matches!(err, NetworkError::MafViolation { property: "monotonicity", .. }), "{err:?}");
        let sq: MafClosure = Arc::new(|v: &[f64]| v.iter().copied().fold(0.0, f64::max).powi(2));
        let maf = Maf::Custom(CustomMaf { rule: CustomRule::Closure(sq), modulus: lin(1.0), xi: lin(1e-6), validation_radius: 10.0 });
        let err = GainNetwork::new(2, vec![(0, 1, lin(1.0))], vec![maf]).unwrap_err();
        assert!(matches!(err, NetworkError::MafViolation { property: "declared modulus", .. }), "{err:?}");
    }

    #[test]
    fn custom_maf_from_json() {
        let spec: NetworkSpec = serde_json::from_str(
            r#"{"nodes":2,"edges":[{"from":0,"to":1,"gain":{"type":"linear","k":0.5}}],
                "maf":{"type":"custom","aggregate":{"pnorm":2.0},"outer":{"type":"linear","k":1},
                       "modulus":{"type":"linear","k":2},"xi":{"type":"linear","k":1}}}"#,
        )
        .unwrap();
        let net = spec.build(None).unwrap();
        assert!((net.maf(1).eval(&[3.0, 4.0]) - 5.0).abs() < 1e-12);
        assert_eq!(net.maf_kind(), Some(MafKind::Custom));
    }

    #[test]
    fn power_gains_report_discretization_error() {
        let spec: NetworkSpec = serde_json::from_str(
            r#"{"nodes":2,"edges":[{"from":0,"to":1,"gain":{"type":"power","c":1.0,"p":2.0}}],"maf":"max"}"#,
        )
        .unwrap();
        let net = spec.build(None).unwrap();
        assert!(net.discretization_error() > 0.0);
        assert!(!net.is_homogeneous());
    }

    #[test]
    fn cycles_and_components() {
        let g = Digraph::new(4, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2), (3, 0)]).unwrap();
        let (cycles, done) = g.simple_cycles(100);
        assert!(done);
        // three 2-cycles and two 3-cycles
        assert_eq!(cycles.len(), 5);
        let (few, done) = g.simple_cycles(2);
        assert_eq!((few.len(), done), (2, false));
        assert_eq!(g.strongly_connected_components(), vec![vec![0, 1, 2], vec![3]]);
        assert!(!g.is_strongly_connected());
    }

    fn reach(g: &Digraph, a: usize, b: usize) -> bool {
        g.distances(a, usize::MAX, Direction::Out).iter().any(|&(x, _)| x == b)
    }

    proptest! {
        #[test]
        fn scc_matches_reachability(edges in prop::collection::vec((0usize..6, 0usize..6), 0..15)) {
            let mut e: Vec<(usize, usize)> = edges.into_iter().filter(|(a, b)| a != b).collect();
            e.sort();
            e.dedup();
            let g = Digraph::new(6, &e).unwrap();
            let comps = g.strongly_connected_components();
            let comp_of = |x: usize| comps.iter().position(|c| c.contains(&x)).unwrap();
            for a in 0..6 {
                for b in 0..6 {
                    prop_assert_eq!(comp_of(a) == comp_of(b), reach(&g, a, b) && reach(&g, b, a));
                }
            }
            // each enumerated cycle is a simple closed walk along edges
            let (cycles, _) = g.simple_cycles(1000);
            for c in &cycles {
                let mut seen = c.clone();
                seen.sort();
                seen.dedup();
                prop_assert_eq!(seen.len(), c.len());
                for k in 0..c.len() {
                    let (x, y) = (c[k], c[(k + 1) % c.len()]);
                    prop_assert!(g.out_neighbors(x).contains(&y));
                }
            }
        }
    }
}
