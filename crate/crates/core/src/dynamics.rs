//! Gain operators `Γ`, their enlarged/augmented/projected variants, and the
//! iterations built on them: trajectories, extremal fixed points of
//! `Γ_b = b ⊕ Γ`, decay margins, cofinality witnesses and a stability battery.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cone::{ConeError, ConeVec};
use crate::kinfty::{envelope, KFun, KFunError, MonotoneSamples, Side};
use crate::network::GainNetwork;

/// Iterates whose norm falls below this fraction of the start count as converged to zero.
pub const GATT_RATIO: f64 = 1e-6;

/// Relative slack used when checking that iterations are monotone.
const MONOTONE_SLACK: f64 = 1e-12;

/// Retries of the upper start point for the maximal fixed point.
const MAX_CAP_DOUBLINGS: usize = 8;

/// Agreement required between consecutive maximal-fixed-point estimates.
const CAP_AGREEMENT: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    KFun(#[from] KFunError),
    #[error("operator expects dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("restriction index {0} out of range")]
    BadRestriction(usize),
    #[error("iteration from the projection vector is not increasing at step {step}, entry {index}")]
    NotIncreasing { step: usize, index: usize },
    #[error("minimal fixed point of the upper start at r = {r} did not converge ({stop:?})")]
    UpperStartFailed { r: f64, stop: StopReason },
    #[error("maximal fixed point did not stabilize after {doublings} doublings of the upper start (last r = {r})")]
    CapNotStabilized { r: f64, doublings: usize },
    #[error("r-grid values must be positive and finite")]
    BadGrid,
}

/// One layer around the base operator; layers apply in list order, the last outermost.
#[derive(Clone)]
pub enum Wrapper {
    /// `(id + ρ) ∘ T`.
    EnlargeLeft { rho: KFun, id_plus: KFun },
    /// `T ∘ (id + ρ)`.
    EnlargeRight { rho: KFun, id_plus: KFun },
    /// `s ↦ s ⊕ T(s)`.
    Augment,
    /// `s ↦ b ⊕ T(s)`.
    Project(ConeVec),
    /// `T⟨J⟩`: embed into the inner index set by zero-padding, apply, read back `J`.
    Restrict(Vec<usize>),
}

impl fmt::Debug for Wrapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Wrapper::EnlargeLeft { rho, .. } => write!(f, "EnlargeLeft({rho:?})"),
            Wrapper::EnlargeRight { rho, .. } => write!(f, "EnlargeRight({rho:?})"),
            Wrapper::Augment => write!(f, "Augment"),
            Wrapper::Project(b) => write!(f, "Project({:?})", b.as_slice()),
            Wrapper::Restrict(j) => write!(f, "Restrict({j:?})"),
        }
    }
}

/// `Γ(s)_i = μ_i([γ_ij(s_j)]_{j ∈ I_i})` plus a chain of wrappers.
#[derive(Clone, Debug)]
pub struct GainOperator {
    net: Arc<GainNetwork>,
    wrappers: Vec<Wrapper>,
    dims: Vec<usize>,
}

impl From<GainNetwork> for GainOperator {
    fn from(net: GainNetwork) -> Self {
        GainOperator::new(Arc::new(net))
    }
}

impl GainOperator {
    pub fn new(net: Arc<GainNetwork>) -> Self {
        let n = net.node_count();
        GainOperator { net, wrappers: Vec::new(), dims: vec![n] }
    }

    pub fn network(&self) -> &Arc<GainNetwork> {
        &self.net
    }

    pub fn wrappers(&self) -> &[Wrapper] {
        &self.wrappers
    }

    /// Operator with the wrappers removed.
    pub fn base(&self) -> GainOperator {
        GainOperator::new(self.net.clone())
    }

    pub fn dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn push(&self, w: Wrapper, dim: usize) -> Self {
        let mut op = self.clone();
        op.wrappers.push(w);
        op.dims.push(dim);
        op
    }

    /// `Γ_ρ = (id + ρ) ∘ Γ`.
    pub fn enlarge_left(&self, rho: &KFun) -> Self {
        self.push(Wrapper::EnlargeLeft { rho: rho.clone(), id_plus: rho.id_plus() }, self.dim())
    }

    /// `Γ^ρ = Γ ∘ (id + ρ)`.
    pub fn enlarge_right(&self, rho: &KFun) -> Self {
        self.push(Wrapper::EnlargeRight { rho: rho.clone(), id_plus: rho.id_plus() }, self.dim())
    }

    /// `Γ̂ = id ⊕ Γ`.
    pub fn augmented(&self) -> Self {
        self.push(Wrapper::Augment, self.dim())
    }

    /// `Γ_b = b ⊕ Γ`.
    pub fn projected(&self, b: &ConeVec) -> Result<Self, DynamicsError> {
        self.check(b.len())?;
        Ok(self.push(Wrapper::Project(b.clone()), self.dim()))
    }

    /// `Γ⟨J⟩` on the index set `J` (positions into the current index set).
    pub fn restricted(&self, nodes: &[usize]) -> Result<Self, DynamicsError> {
        if let Some(&bad) = nodes.iter().find(|&&i| i >= self.dim()) {
            return Err(DynamicsError::BadRestriction(bad));
        }
        Ok(self.push(Wrapper::Restrict(nodes.to_vec()), nodes.len()))
    }

    fn check(&self, got: usize) -> Result<(), DynamicsError> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(DynamicsError::Dimension { expected: self.dim(), got })
        }
    }

    pub fn apply(&self, s: &ConeVec) -> Result<ConeVec, DynamicsError> {
        self.check(s.len())?;
        Ok(ConeVec::from_trusted(self.apply_raw(s.as_slice())))
    }

    /// Applies to a slice already known to have the right dimension.
    pub fn apply_raw(&self, s: &[f64]) -> Vec<f64> {
        self.eval_at(self.wrappers.len(), s)
    }

    /// Single component `T(s)_i` of the base operator.
    pub fn base_component(&self, i: usize, s: &[f64]) -> f64 {
        let net = &*self.net;
        let nbrs = net.graph().in_neighbors(i);
        if nbrs.is_empty() {
            return 0.0;
        }
        let gains = net.gains_into(i);
        match net.maf(i) {
            crate::network::Maf::Max => nbrs.iter().zip(gains).map(|(&j, g)| g.eval(s[j])).fold(0.0, f64::max),
            crate::network::Maf::Sum => nbrs.iter().zip(gains).map(|(&j, g)| g.eval(s[j])).sum(),
            m => {
                let v: Vec<f64> = nbrs.iter().zip(gains).map(|(&j, g)| g.eval(s[j])).collect();
                m.eval(&v).max(0.0)
            }
        }
    }

    fn eval_at(&self, depth: usize, s: &[f64]) -> Vec<f64> {
        if depth == 0 {
            return (0..self.net.node_count()).map(|i| self.base_component(i, s)).collect();
        }
        match &self.wrappers[depth - 1] {
            Wrapper::EnlargeLeft { id_plus, .. } => {
                let mut v = self.eval_at(depth - 1, s);
                v.iter_mut().for_each(|x| *x = id_plus.eval(*x));
                v
            }
            Wrapper::EnlargeRight { id_plus, .. } => {
                let t: Vec<f64> = s.iter().map(|&x| id_plus.eval(x)).collect();
                self.eval_at(depth - 1, &t)
            }
            Wrapper::Augment => {
                let mut v = self.eval_at(depth - 1, s);
                v.iter_mut().zip(s).for_each(|(x, y)| *x = x.max(*y));
                v
            }
            Wrapper::Project(b) => {
                let mut v = self.eval_at(depth - 1, s);
                v.iter_mut().zip(b.as_slice()).for_each(|(x, y)| *x = x.max(*y));
                v
            }
            Wrapper::Restrict(nodes) => {
                let mut full = vec![0.0; self.dims[depth - 1]];
                for (k, &i) in nodes.iter().enumerate() {
                    full[i] = s[k];
                }
                let v = self.eval_at(depth - 1, &full);
                nodes.iter().map(|&i| v[i]).collect()
            }
        }
    }

    /// `n`-fold application.
    pub fn apply_n(&self, s: &ConeVec, n: usize) -> Result<ConeVec, DynamicsError> {
        self.check(s.len())?;
        let mut v = s.as_slice().to_vec();
        for _ in 0..n {
            v = self.apply_raw(&v);
        }
        Ok(ConeVec::from_trusted(v))
    }
}

/// Stopping rule for iterations.
///
/// Converged when `‖sⁿ⁺¹ − sⁿ‖ ≤ tol·max(‖sⁿ‖, ‖s⁰‖)`; diverged when
/// `‖sⁿ‖` exceeds the bound (default `1e9·‖s⁰‖ + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopRule {
    pub max_iter: usize,
    pub tol: f64,
    pub divergence_bound: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { max_iter: 100_000, tol: 1e-10, divergence_bound: None }
    }
}

impl StopRule {
    pub fn with_tol(tol: f64) -> Self {
        StopRule { tol, ..Default::default() }
    }

    fn bound(&self, s0_norm: f64) -> f64 {
        self.divergence_bound.unwrap_or(1e9 * s0_norm + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    /// The step from application `step` was within tolerance.
    Converged { step: usize, residual: f64 },
    MaxIter { residual: f64 },
    Diverged { step: usize, norm: f64 },
}

impl StopReason {
    pub fn is_converged(&self) -> bool {
        matches!(self, StopReason::Converged { .. })
    }
}

/// `sⁿ⁺¹ = T(sⁿ)` from `s⁰`.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub states: Vec<ConeVec>,
    pub stop: StopReason,
}

struct Run {
    last: Vec<f64>,
    steps: usize,
    stop: StopReason,
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn sup(a: &[f64]) -> f64 {
    a.iter().copied().fold(0.0, f64::max)
}

fn run<F>(op: &GainOperator, s0: &[f64], rule: &StopRule, mut visit: F) -> Result<Run, DynamicsError>
where
    F: FnMut(usize, &[f64], &[f64]) -> Result<(), DynamicsError>,
{
    let n0 = sup(s0);
    let bound = rule.bound(n0);
    let mut cur = s0.to_vec();
    let mut residual = f64::INFINITY;
    for step in 0..rule.max_iter {
        let next = op.apply_raw(&cur);
        visit(step, &cur, &next)?;
        residual = sup_dist(&next, &cur);
        let scale = sup(&cur).max(n0);
        let norm = sup(&next);
        cur = next;
        if norm > bound || !norm.is_finite() {
            return Ok(Run { last: cur, steps: step + 1, stop: StopReason::Diverged { step, norm } });
        }
        if residual <= rule.tol * scale {
            return Ok(Run { last: cur, steps: step + 1, stop: StopReason::Converged { step, residual } });
        }
    }
    Ok(Run { last: cur, steps: rule.max_iter, stop: StopReason::MaxIter { residual } })
}

/// Iterates `op` from `s0`, keeping every state.
pub fn iterate(op: &GainOperator, s0: &ConeVec, rule: &StopRule) -> Result<Trajectory, DynamicsError> {
    op.check(s0.len())?;
    let mut states = vec![s0.clone()];
    let r = run(op, s0.as_slice(), rule, |_, _, next| {
        states.push(ConeVec::from_trusted(next.to_vec()));
        Ok(())
    })?;
    Ok(Trajectory { states, stop: r.stop })
}

/// Applies `op` exactly `steps` times (stopping early only on divergence);
/// the stop reason reflects the last step.
pub fn iterate_steps(op: &GainOperator, s0: &ConeVec, steps: usize, rule: &StopRule) -> Result<Trajectory, DynamicsError> {
    let fixed = StopRule { max_iter: steps, tol: f64::NEG_INFINITY, ..*rule };
    let mut t = iterate(op, s0, &fixed)?;
    if let StopReason::MaxIter { .. } = t.stop {
        // report the first step that met the tolerance, if any
        let first = t.states.windows(2).enumerate().find_map(|(k, w)| {
            let residual = sup_dist(w[0].as_slice(), w[1].as_slice());
            (residual <= rule.tol * w[0].norm().max(s0.norm())).then_some((k, residual))
        });
        if let Some((step, residual)) = first {
            t.stop = StopReason::Converged { step, residual };
        }
    }
    Ok(t)
}

/// Result of a fixed-point iteration.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint {
    pub point: ConeVec,
    pub iterations: usize,
    pub stop: StopReason,
}

impl FixedPoint {
    pub fn converged(&self) -> bool {
        self.stop.is_converged()
    }
}

/// `s_*(b) = lim Γ_bⁿ(b)`, the minimal fixed point of `Γ_b` above `b`.
///
/// `op` is the unprojected operator (`Γ` or `Γ_ρ`). The trajectory must be
/// increasing; a decrease beyond rounding is reported as an error.
pub fn min_fixed_point(op: &GainOperator, b: &ConeVec, rule: &StopRule) -> Result<FixedPoint, DynamicsError> {
    let pb = op.projected(b)?;
    let r = run(&pb, b.as_slice(), rule, |step, cur, next| {
        let scale = sup(next).max(1.0);
        match cur.iter().zip(next).position(|(c, n)| *n < c - MONOTONE_SLACK * scale) {
            Some(index) => Err(DynamicsError::NotIncreasing { step, index }),
            None => Ok(()),
        }
    })?;
    Ok(FixedPoint { point: ConeVec::from_trusted(r.last), iterations: r.steps, stop: r.stop })
}

/// Maximal fixed point of `Γ_b` and the upper start used to reach it.
#[derive(Debug, Clone, Serialize)]
pub struct MaxFixedPoint {
    pub point: ConeVec,
    /// Final `r` with `s⁰ = s_*(r·𝟙)`.
    pub r_cap: f64,
    pub doublings: usize,
    pub iterations: usize,
}

/// `s^*(b)`: iterate `Γ_b` downward from `s_*(r·𝟙)`, `r ≥ ‖b‖`.
///
/// Without a bound `φ` to pick `r`, `r` is doubled until two consecutive
/// estimates agree (at most eight doublings).
pub fn max_fixed_point(op: &GainOperator, b: &ConeVec, r_cap: Option<f64>, rule: &StopRule) -> Result<MaxFixedPoint, DynamicsError> {
    let pb = op.projected(b)?;
    let mut r = r_cap.unwrap_or(0.0).max(b.norm());
    if r <= 0.0 {
        r = 1.0;
    }
    let mut prev: Option<Vec<f64>> = None;
    for doublings in 0..=MAX_CAP_DOUBLINGS {
        let top = min_fixed_point(op, &ConeVec::ray(op.dim(), r)?, rule)?;
        if !top.converged() {
            return Err(DynamicsError::UpperStartFailed { r, stop: top.stop });
        }
        let mut increased = false;
        let out = run(&pb, top.point.as_slice(), rule, |_, cur, next| {
            let scale = sup(cur).max(1.0);
            if cur.iter().zip(next).any(|(c, n)| *n > c + MONOTONE_SLACK * scale) {
                increased = true;
            }
            Ok(())
        })?;
        if !increased && out.stop.is_converged() {
            if let Some(p) = &prev {
                if sup_dist(p, &out.last) <= CAP_AGREEMENT * sup(&out.last).max(1.0) {
                    return Ok(MaxFixedPoint {
                        point: ConeVec::from_trusted(out.last),
                        r_cap: r,
                        doublings,
                        iterations: out.steps,
                    });
                }
            }
            prev = Some(out.last);
        }
        r *= 2.0;
    }
    Err(DynamicsError::CapNotStabilized { r, doublings: MAX_CAP_DOUBLINGS })
}

/// `s − T(s)` and whether `s` lies in the decay set `Ψ(T) = {s : T(s) ≤ s}`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayMargin {
    pub margin: Vec<f64>,
    pub min_margin: f64,
}

impl DecayMargin {
    /// `min_i (s − T(s))_i ≥ −tol·max(1, ‖s‖)`.
    pub fn in_decay_set(&self, s_norm: f64, tol: f64) -> bool {
        self.min_margin >= -tol * s_norm.max(1.0)
    }
}

pub fn decay_margin(op: &GainOperator, s: &ConeVec) -> Result<DecayMargin, DynamicsError> {
    let t = op.apply(s)?;
    let margin = s.sub(&t)?;
    let min_margin = margin.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DecayMargin { margin, min_margin })
}

/// Samples points of the order interval `[T(s), s]` and checks they decay too.
/// Returns the first sampled point that does not.
pub fn check_order_interval<R: Rng>(op: &GainOperator, s: &ConeVec, samples: usize, rng: &mut R) -> Result<Option<ConeVec>, DynamicsError> {
    let t = op.apply(s)?;
    for _ in 0..samples {
        let v: Vec<f64> = s
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(&hi, &lo)| {
                let lo = lo.min(hi);
                lo + rng.random::<f64>() * (hi - lo)
            })
            .collect();
        let tv = op.apply_raw(&v);
        if tv.iter().zip(&v).any(|(a, b)| *a > b + MONOTONE_SLACK * b.max(1.0)) {
            return Ok(Some(ConeVec::from_trusted(v)));
        }
    }
    Ok(None)
}

/// Outcome of searching for `ŝ ≥ s` in the decay set.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cofinality {
    /// `ŝ = lim Γ̂ⁿ(s)`, with `Γ(ŝ) ≤ ŝ` up to the iteration tolerance.
    Witness { point: ConeVec, iterations: usize },
    Divergent { norm: f64, steps: usize },
    Inconclusive { steps: usize },
}

pub fn cofinality_witness(op: &GainOperator, s: &ConeVec, rule: &StopRule) -> Result<Cofinality, DynamicsError> {
    op.check(s.len())?;
    let r = run(&op.augmented(), s.as_slice(), rule, |_, _, _| Ok(()))?;
    Ok(match r.stop {
        StopReason::Converged { .. } => Cofinality::Witness { point: ConeVec::from_trusted(r.last), iterations: r.steps },
        StopReason::Diverged { norm, .. } => Cofinality::Divergent { norm, steps: r.steps },
        StopReason::MaxIter { .. } => Cofinality::Inconclusive { steps: r.steps },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GattVerdict {
    /// `‖Γⁿ(r𝟙)‖ ≤ GATT_RATIO·r` at step `steps`.
    Pass { steps: usize },
    /// Diverged or settled at a nonzero limit of the given norm.
    Fail { norm: f64, diverged: bool },
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UgsVerdict {
    /// `sup_n ‖Γ̂ⁿ(r𝟙)‖`.
    Bounded { sup: f64 },
    Diverged { norm: f64 },
    Inconclusive { sup: f64 },
}

/// Sampled stability evidence on a grid of rays `r𝟙`.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub r_grid: Vec<f64>,
    /// `β(r, n) = ‖Γⁿ(r𝟙)‖` for `n = 0..=n_max`, one row per `r`.
    pub kl_table: Vec<Vec<f64>>,
    /// Rows that never increase (then `r𝟙` is a decay point).
    pub monotone_rows: Vec<bool>,
    pub ugs: Vec<UgsVerdict>,
    /// Above-envelope of `r ↦ sup_n ‖Γ̂ⁿ(r𝟙)‖`, when every ray stays bounded.
    pub ugs_envelope: Option<KFun>,
    pub gatt: Vec<GattVerdict>,
    pub ugs_holds: bool,
    pub gatt_holds: bool,
    pub ugas_evidence: bool,
}

pub fn stability_battery(op: &GainOperator, r_grid: &[f64], n_max: usize, rule: &StopRule) -> Result<StabilityReport, DynamicsError> {
    if r_grid.iter().any(|&r| !(r > 0.0 && r.is_finite())) || r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DynamicsError::BadGrid);
    }
    let n = op.dim();
    let hat = op.augmented();
    let mut kl_table = Vec::with_capacity(r_grid.len());
    let mut monotone_rows = Vec::new();
    let mut ugs = Vec::new();
    let mut gatt = Vec::new();
    for &r in r_grid {
        let mut s = vec![r; n];
        let mut row = vec![r];
        for _ in 0..n_max {
            s = op.apply_raw(&s);
            row.push(sup(&s));
        }
        monotone_rows.push(row.windows(2).all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK)));
        kl_table.push(row);

        let h = run(&hat, &vec![r; n], rule, |_, _, _| Ok(()))?;
        ugs.push(match h.stop {
            StopReason::Converged { .. } => UgsVerdict::Bounded { sup: sup(&h.last) },
            StopReason::Diverged { norm, .. } => UgsVerdict::Diverged { norm },
            StopReason::MaxIter { .. } => UgsVerdict::Inconclusive { sup: sup(&h.last) },
        });
        gatt.push(gatt_probe(op, r, rule));
    }
    let ugs_holds = ugs.iter().all(|u| matches!(u, UgsVerdict::Bounded { .. }));
    let ugs_envelope = if ugs_holds && !r_grid.is_empty() {
        let zs = ugs.iter().map(|u| if let UgsVerdict::Bounded { sup } = u { *sup } else { 0.0 }).collect();
        Some(envelope(&MonotoneSamples::upper_hull(r_grid.to_vec(), zs)?, Side::Above)?)
    } else {
        None
    };
    let gatt_holds = gatt.iter().all(|g| matches!(g, GattVerdict::Pass { .. }));
    Ok(StabilityReport {
        r_grid: r_grid.to_vec(),
        kl_table,
        monotone_rows,
        ugs,
        ugs_envelope,
        gatt,
        ugs_holds,
        gatt_holds,
        ugas_evidence: ugs_holds && gatt_holds,
    })
}

fn gatt_probe(op: &GainOperator, r: f64, rule: &StopRule) -> GattVerdict {
    let bound = rule.bound(r);
    let mut s = vec![r; op.dim()];
    for step in 0..rule.max_iter {
        let next = op.apply_raw(&s);
        let norm = sup(&next);
        if norm <= GATT_RATIO * r {
            return GattVerdict::Pass { steps: step + 1 };
        }
        if norm > bound || !norm.is_finite() {
            return GattVerdict::Fail { norm, diverged: true };
        }
        if sup_dist(&next, &s) <= rule.tol * sup(&s).max(r) {
            return GattVerdict::Fail { norm, diverged: false };
        }
        s = next;
    }
    GattVerdict::Inconclusive
}
