//! Paths of decay: construction, regularization and validation.
//!
//! A path is stored as knots `(r_k, σ(r_k))` with `r_0 = 0`, `σ(0) = 0` and
//! piecewise-linear interpolation. Validation checks the defining properties
//! at every knot; segment interiors get an informational midpoint check.

use serde::Serialize;
use thiserror::Error;

use crate::checks::{max_mbi_probe, CheckError, SgcVerdict, Witness};
use crate::cone::{leq_tol, ConeError, ConeVec};
use crate::dynamics::{
    cofinality_witness, decay_margin, iterate, max_fixed_point, min_fixed_point, Cofinality, DynamicsError, GainOperator,
    StopReason, StopRule,
};
use crate::kinfty::{envelope, sub_from_id, KFun, KFunError, MonotoneSamples, Side};

/// Relative slack for knot membership in the decay set.
pub const DECAY_TOL: f64 = 1e-9;

/// Default cap on knots produced by [`regularize`].
pub const DEFAULT_MAX_KNOTS: usize = 1_000_000;

/// Orbit paths are rejected when `min_i s_i / ‖s‖` drops below this along the orbit.
pub const ORBIT_COERCIVITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone)]
pub enum PathError {
    #[error("knot grid must be finite, positive and strictly increasing")]
    BadGrid,
    #[error("fixed-point iteration at r = {r} did not converge: {stop:?}")]
    KnotFailed { r: f64, stop: StopReason },
    #[error("knot {index} is not above knot {}", index - 1)]
    NotMonotone { index: usize },
    #[error("max-MBI probe did not pass on the knot grid")]
    NoMbi { verdict: Box<SgcVerdict> },
    #[error("start point is not in the decay set (margin {margin:e})")]
    NotInDecaySet { margin: f64 },
    #[error("start point needs strictly positive entries")]
    NotPositive,
    #[error("orbit did not reach zero within {steps} steps")]
    NotAttractive { steps: usize },
    #[error("orbit point {point:?} has min/max ratio {ratio:e}")]
    NotCoercive { point: ConeVec, ratio: f64 },
    #[error("upward extension failed at target {target}")]
    NoWitness { target: f64 },
    #[error("path has no decay margin ρ to regularize with")]
    NoMargin,
    #[error("target margin is too large for the path's margin")]
    TargetTooLarge,
    #[error("refining window [{}, {}] needs more than {max_knots} knots", window.0, window.1)]
    TooManyKnots { window: (f64, f64), max_knots: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    KFun(#[from] KFunError),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

/// `2^k` for `k ∈ [lo, hi]`.
pub fn geometric_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(k)).collect()
}

pub fn default_grid() -> Vec<f64> {
    geometric_grid(-20, 20)
}

fn check_grid(r: &[f64]) -> Result<(), PathError> {
    let ok = !r.is_empty() && r[0] > 0.0 && r.iter().all(|x| x.is_finite()) && r.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(PathError::BadGrid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPath {
    /// Strictly increasing, `r_grid[0] = 0`.
    pub r_grid: Vec<f64>,
    /// `points[0] = 0`.
    pub points: Vec<ConeVec>,
    /// Decay is required under `Γ_ρ`; `None` means plain decay.
    pub rho: Option<KFun>,
    pub phi_min: KFun,
    pub phi_max: KFun,
}

impl DecayPath {
    /// Prepends the origin to positive knots.
    fn from_knots(r: Vec<f64>, pts: Vec<ConeVec>, rho: Option<KFun>, phi_min: KFun, phi_max: KFun) -> Self {
        let dim = pts.first().map_or(0, ConeVec::len);
        let mut r_grid = vec![0.0];
        r_grid.extend(r);
        let mut points = vec![ConeVec::zeros(dim)];
        points.extend(pts);
        DecayPath { r_grid, points, rho, phi_min, phi_max }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.r_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_grid.is_empty()
    }

    /// Piecewise-linear interpolation; the last segment is extended beyond the grid.
    pub fn eval(&self, r: f64) -> ConeVec {
        assert!(r >= 0.0, "path evaluated at negative r = {r}");
        let n = self.r_grid.len();
        if n == 1 {
            return self.points[0].clone();
        }
        let k = self.r_grid.partition_point(|&x| x <= r).clamp(1, n - 1) - 1;
        let (r0, r1) = (self.r_grid[k], self.r_grid[k + 1]);
        let alpha = (r - r0) / (r1 - r0);
        let (a, b) = (self.points[k].as_slice(), self.points[k + 1].as_slice());
        ConeVec::from_trusted(a.iter().zip(b).map(|(x, y)| (x + alpha * (y - x)).max(0.0)).collect())
    }
}

/// `φ_min` from a lower hull of minimum entries, `φ_max` from an upper hull of norms.
fn fit_bounds(r: &[f64], pts: &[ConeVec]) -> Result<(KFun, KFun), PathError> {
    let mins: Vec<f64> = pts.iter().map(ConeVec::min_entry).collect();
    if let Some(k) = mins.iter().position(|&m| !(m > 0.0)) {
        return Err(PathError::NotCoercive { point: pts[k].clone(), ratio: 0.0 });
    }
    let norms: Vec<f64> = pts.iter().map(ConeVec::norm).collect();
    let lo = envelope(&MonotoneSamples::lower_hull(r.to_vec(), mins)?, Side::Below)?;
    let hi = envelope(&MonotoneSamples::upper_hull(r.to_vec(), norms)?, Side::Above)?;
    Ok((lo, hi))
}

fn enlarged(op: &GainOperator, rho: Option<&KFun>) -> GainOperator {
    match rho {
        Some(rho) => op.enlarge_left(rho),
        None => op.clone(),
    }
}

fn check_monotone(pts: &[ConeVec]) -> Result<(), PathError> {
    for (k, w) in pts.windows(2).enumerate() {
        if !leq_tol(w[0].as_slice(), w[1].as_slice(), DECAY_TOL * w[1].norm().max(1.0)) {
            return Err(PathError::NotMonotone { index: k + 1 });
        }
    }
    Ok(())
}

/// `σ(r_k) = s_*(r_k𝟙)` for `Γ_ρ`, i.e. the limit of `Γ̂_ρⁿ(r_k𝟙)`.
pub fn minimal_path(op: &GainOperator, rho: Option<&KFun>, r_grid: &[f64], rule: &StopRule) -> Result<DecayPath, PathError> {
    check_grid(r_grid)?;
    let g = enlarged(op, rho);
    let mut pts = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let fp = min_fixed_point(&g, &ConeVec::ray(g.dim(), r)?, rule)?;
        if !fp.converged() {
            return Err(PathError::KnotFailed { r, stop: fp.stop });
        }
        pts.push(fp.point);
    }
    check_monotone(&pts)?;
    let norms: Vec<f64> = pts.iter().map(ConeVec::norm).collect();
    let phi_max = envelope(&MonotoneSamples::upper_hull(r_grid.to_vec(), norms)?, Side::Above)?;
    Ok(DecayPath::from_knots(r_grid.to_vec(), pts, rho.cloned(), KFun::identity(), phi_max))
}

/// Knots `s^k = s^*(r_k𝟙)` for `Γ_ρ`; each gap `(r_k, r_{k+1})` holds up to
/// `m_interp` points of the decreasing trajectory `Γ_{ρ,r_k𝟙}ⁿ(s^{k+1})`.
pub fn combined_path(op: &GainOperator, rho: Option<&KFun>, r_knots: &[f64], m_interp: usize, rule: &StopRule) -> Result<DecayPath, PathError> {
    check_grid(r_knots)?;
    let g = enlarged(op, rho);
    let mbi = max_mbi_probe(&g, r_knots, rule)?;
    let phi = match (&mbi.witness, mbi.is_passing()) {
        (Some(Witness::MbiFit { phi }), true) => phi.clone(),
        _ => return Err(PathError::NoMbi { verdict: Box::new(mbi) }),
    };
    let mut knots = Vec::with_capacity(r_knots.len());
    for &r in r_knots {
        knots.push(max_fixed_point(&g, &ConeVec::ray(g.dim(), r)?, Some(phi.eval(r)), rule)?.point);
    }
    check_monotone(&knots)?;

    let mut rs = vec![r_knots[0]];
    let mut pts = vec![knots[0].clone()];
    let sub = StopRule { max_iter: m_interp, ..*rule };
    for k in 0..r_knots.len() - 1 {
        let (r0, r1) = (r_knots[k], r_knots[k + 1]);
        let traj = iterate(&g.projected(&ConeVec::ray(g.dim(), r0)?)?, &knots[k + 1], &sub)?;
        let floor = &knots[k];
        let mut gap: Vec<ConeVec> = Vec::new();
        let mut prev = &knots[k + 1];
        for s in traj.states.iter().skip(1) {
            if !leq_tol(s.as_slice(), prev.as_slice(), DECAY_TOL * prev.norm().max(1.0)) {
                return Err(PathError::NotMonotone { index: rs.len() });
            }
            if s == prev || s.dist(floor)? <= 1e-12 * floor.norm().max(1.0) {
                break;
            }
            gap.push(s.clone());
            prev = s;
        }
        let m = gap.len();
        for (j, s) in gap.into_iter().enumerate().rev() {
            rs.push(r1 - (r1 - r0) * (j + 1) as f64 / (m + 1) as f64);
            pts.push(s);
        }
        rs.push(r1);
        pts.push(knots[k + 1].clone());
    }
    let (phi_min, phi_max) = fit_bounds(&rs, &pts)?;
    Ok(DecayPath::from_knots(rs, pts, rho.cloned(), phi_min, phi_max))
}

/// Linear interpolation along the forward orbit of `s0` and, upward,
/// decay points `lim Γ̂ⁿ(2^k‖s0‖𝟙 ⊕ previous)` for `k = 1..=up_steps`.
/// Knots are parametrized by their mean entry.
pub fn orbit_path(op: &GainOperator, s0: &ConeVec, up_steps: usize, rule: &StopRule) -> Result<DecayPath, PathError> {
    if s0.is_empty() || !(s0.min_entry() > 0.0) {
        return Err(PathError::NotPositive);
    }
    let dm = decay_margin(op, s0)?;
    if !dm.in_decay_set(s0.norm(), DECAY_TOL) {
        return Err(PathError::NotInDecaySet { margin: dm.min_margin });
    }
    let target = 1e-12 * s0.norm();
    let mut down = vec![s0.clone()];
    loop {
        let last = down.last().unwrap();
        if last.norm() <= target {
            break;
        }
        if down.len() > rule.max_iter {
            return Err(PathError::NotAttractive { steps: rule.max_iter });
        }
        let next = op.apply(last)?;
        if &next == last {
            return Err(PathError::NotAttractive { steps: down.len() });
        }
        down.push(next);
    }
    let mut up = Vec::with_capacity(up_steps);
    let mut prev = s0.clone();
    for k in 1..=up_steps {
        let t = 2f64.powi(k as i32) * s0.norm();
        let start = ConeVec::ray(op.dim(), t)?.oplus(&prev)?;
        match cofinality_witness(op, &start, rule)? {
            Cofinality::Witness { point, .. } => {
                up.push(point.clone());
                prev = point;
            }
            _ => return Err(PathError::NoWitness { target: t }),
        }
    }
    let mut pts: Vec<ConeVec> = down.into_iter().rev().collect();
    pts.extend(up);
    pts.retain(|s| !s.is_zero());
    pts.dedup();
    let mut worst = (f64::INFINITY, 0);
    for (k, s) in pts.iter().enumerate() {
        let ratio = s.min_entry() / s.norm();
        if ratio < worst.0 {
            worst = (ratio, k);
        }
    }
    if worst.0 < ORBIT_COERCIVITY_FLOOR {
        return Err(PathError::NotCoercive { point: pts[worst.1].clone(), ratio: worst.0 });
    }
    let rs: Vec<f64> = pts.iter().map(|s| s.as_slice().iter().sum::<f64>() / s.len() as f64).collect();
    if rs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(PathError::NotMonotone { index: rs.windows(2).position(|w| !(w[0] < w[1])).unwrap() + 1 });
    }
    let (phi_min, phi_max) = fit_bounds(&rs, &pts)?;
    Ok(DecayPath::from_knots(rs, pts, None, phi_min, phi_max))
}

/// Strictly increasing lift weight, `f(0) = 1/4`, `f(∞) = 1/2`.
pub fn lift_weight(r: f64) -> f64 {
    (1.0 + r / (1.0 + r)) / 4.0
}

/// Knot spacing for piecewise-linear refinement on a window starting at `a`:
/// `η(φ_min(a))` with `(id + ρ')⁻¹ = id − η`.
pub fn step_tolerance(rho_spare: &KFun, phi_min: &KFun, a: f64) -> Result<f64, PathError> {
    Ok(sub_from_id(rho_spare)?.eval(phi_min.eval(a)))
}

/// `(id + outer) ∘ (id + inner)⁻¹ − id`, if it is a K∞ function.
fn quotient_margin(outer: &KFun, inner: &KFun) -> Result<KFun, PathError> {
    let q = outer.id_plus().compose(&inner.id_plus().inverse());
    let pts: Vec<(f64, f64)> = q.points().map(|(x, y)| (x, y - x)).collect();
    KFun::new(pts, q.final_slope() - 1.0).map_err(|_| PathError::TargetTooLarge)
}

/// Turns a path of decay for `Γ_ρ̃` (`ρ̃ = path.rho`) into a strictly increasing
/// piecewise-linear path of decay for `Γ_ρt`.
///
/// First `σ₁ = (id + ρ̃)⁻¹ ∘ σ`, which decays for `Γ ∘ (id + ρ̃)`. The lift
/// `σ₂(r) = (id + f(r)ρ̃)(σ₁(r))` is strictly increasing and decays for
/// `Γ_{ρ̃/4}`. Writing `id + ρ̃/4 = (id + ρ') ∘ (id + ρt)`, knots are refined
/// until consecutive points are closer than `η(φ_min(a))` on each window,
/// where `(id + ρ')⁻¹ = id − η`. Without a target, `ρt = ρ̃/8`.
pub fn regularize(path: &DecayPath, target_rho: Option<&KFun>, max_knots: usize) -> Result<DecayPath, PathError> {
    let rho = path.rho.as_ref().ok_or(PathError::NoMargin)?;
    let lifted = rho.scale(0.25)?;
    let (spare, target) = match target_rho {
        Some(t) => (quotient_margin(&lifted, t)?, t.clone()),
        None => {
            let t = lifted.scale(0.5)?;
            (quotient_margin(&lifted, &t)?, t)
        }
    };
    let eta = sub_from_id(&spare)?;
    let back = rho.id_plus().inverse();
    let lift = |r: f64| -> ConeVec {
        let s = path.eval(r);
        let f = lift_weight(r);
        ConeVec::from_trusted(s.as_slice().iter().map(|&x| back.eval(x)).map(|y| y + f * rho.eval(y)).collect())
    };
    let phi_min = back.compose(&path.phi_min);

    let mut rs = vec![path.r_grid[1]];
    let mut pts = vec![lift(path.r_grid[1])];
    for k in 1..path.len() - 1 {
        let (a, b) = (path.r_grid[k], path.r_grid[k + 1]);
        let eps = eta.eval(phi_min.eval(a));
        // iterative bisection keeping the stack sorted so knots come out increasing
        let mut stack = vec![(b, lift(b))];
        let mut left = (a, pts.last().unwrap().clone());
        while let Some((v, sv)) = stack.pop() {
            if sv.dist(&left.1)? < eps || v - left.0 <= f64::EPSILON * v {
                rs.push(v);
                pts.push(sv.clone());
                left = (v, sv);
            } else {
                let mid = 0.5 * (left.0 + v);
                stack.push((v, sv));
                stack.push((mid, lift(mid)));
            }
            if rs.len() > max_knots {
                return Err(PathError::TooManyKnots { window: (a, b), max_knots });
            }
        }
    }
    Ok(DecayPath::from_knots(rs, pts, Some(target), phi_min, path.phi_max.clone()))
}

/// Reindexes knots by `r ↦ φ_min(r)` so the lower bound becomes `id`.
pub fn reparametrize_min_id(path: &DecayPath) -> DecayPath {
    if path.phi_min == KFun::identity() {
        return path.clone();
    }
    DecayPath {
        r_grid: path.r_grid.iter().map(|&r| path.phi_min.eval(r)).collect(),
        points: path.points.clone(),
        rho: path.rho.clone(),
        phi_min: KFun::identity(),
        phi_max: path.phi_max.compose(&path.phi_min.inverse()),
    }
}

/// Components `nodes` of every knot, for validation against the sub-network on `nodes`.
pub fn restrict_path(path: &DecayPath, nodes: &[usize]) -> Result<DecayPath, PathError> {
    let points = path.points.iter().map(|s| s.select(nodes)).collect::<Result<Vec<_>, _>>()?;
    Ok(DecayPath { points, ..path.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub pass: bool,
    /// Smallest slack found; negative when violated.
    pub worst_margin: f64,
    /// Knot index where the worst margin occurs.
    pub at: Option<usize>,
}

impl PropertyCheck {
    fn new() -> Self {
        PropertyCheck { pass: true, worst_margin: f64::INFINITY, at: None }
    }

    fn record(&mut self, margin: f64, slack: f64, at: usize) {
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.at = Some(at);
        }
        if margin < -slack || margin.is_nan() {
            self.pass = false;
        }
    }
}

/// Slope extremes of all components over the segments starting in `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzWindow {
    pub lo: f64,
    pub hi: f64,
    pub l: f64,
    #[serde(rename = "L")]
    pub big_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    /// (i) `Γ_ρ(σ(r_k)) ≤ σ(r_k)` up to relative slack.
    pub decay: PropertyCheck,
    /// (ii) `φ_min(r)𝟙 ≤ σ(r) ≤ φ_max(r)𝟙`.
    pub bounds: PropertyCheck,
    /// (iii) strict increase of every component, `σ(0) = 0`, positive final slope.
    pub strict_increase: PropertyCheck,
    /// (iv) per dyadic window; passes when every `l > 0`.
    pub windows: Vec<LipschitzWindow>,
    pub bilipschitz: bool,
    /// Non-decreasing components (C0-path monotonicity).
    pub monotone: PropertyCheck,
    /// Every knot finite, grid strictly increasing, origin at `r = 0`.
    pub continuous: bool,
    /// Decay at segment midpoints; not part of either verdict.
    pub midpoint_decay: PropertyCheck,
    pub has_margin: bool,
    /// (i)–(iv) with `ρ` present.
    pub strict: bool,
    /// C0 items: decay, bounds, monotone, continuous.
    pub c0: bool,
}

fn window_of(r: f64) -> i32 {
    r.log2().floor() as i32
}

pub fn validate(path: &DecayPath, op: &GainOperator) -> Result<PathReport, PathError> {
    let g = enlarged(op, path.rho.as_ref());
    let n = path.len();
    let mut decay = PropertyCheck::new();
    let mut bounds = PropertyCheck::new();
    let mut strict_increase = PropertyCheck::new();
    let mut monotone = PropertyCheck::new();
    let mut midpoint_decay = PropertyCheck::new();
    let continuous = n >= 2
        && path.r_grid[0] == 0.0
        && path.points.len() == n
        && path.r_grid.windows(2).all(|w| w[0] < w[1])
        && path.points.iter().all(|s| s.len() == g.dim() && s.as_slice().iter().all(|x| x.is_finite()));
    if !continuous {
        return Ok(PathReport {
            decay,
            bounds,
            strict_increase,
            windows: Vec::new(),
            bilipschitz: false,
            monotone,
            continuous,
            midpoint_decay,
            has_margin: path.rho.is_some(),
            strict: false,
            c0: false,
        });
    }
    if !path.points[0].is_zero() {
        strict_increase.record(-path.points[0].norm(), 0.0, 0);
    }
    for (k, (&r, s)) in path.r_grid.iter().zip(&path.points).enumerate() {
        let scale = s.norm().max(1.0);
        decay.record(decay_margin(&g, s)?.min_margin / scale, DECAY_TOL, k);
        let (lo, hi) = (path.phi_min.eval(r), path.phi_max.eval(r));
        let gap = s.as_slice().iter().map(|&x| (x - lo).min(hi - x)).fold(f64::INFINITY, f64::min);
        bounds.record(gap / scale, DECAY_TOL, k);
        if k + 1 < n {
            let next = &path.points[k + 1];
            let inc = next.sub(s)?.into_iter().fold(f64::INFINITY, f64::min);
            strict_increase.record(inc, 0.0, k + 1);
            if inc <= 0.0 {
                strict_increase.pass = false;
            }
            monotone.record(inc / next.norm().max(1.0), DECAY_TOL, k + 1);
            let mid = s.lerp(next, 0.5)?;
            midpoint_decay.record(decay_margin(&g, &mid)?.min_margin / mid.norm().max(1.0), DECAY_TOL, k);
        }
    }

    let mut windows: Vec<LipschitzWindow> = Vec::new();
    for k in 1..n - 1 {
        let (r0, r1) = (path.r_grid[k], path.r_grid[k + 1]);
        let slopes = path.points[k + 1].sub(&path.points[k])?;
        let (lo, hi) = slopes.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d / (r1 - r0)), b.max(d / (r1 - r0))));
        let w = window_of(r0);
        match windows.last_mut() {
            Some(last) if window_of(last.lo) == w => {
                last.l = last.l.min(lo);
                last.big_l = last.big_l.max(hi);
            }
            _ => windows.push(LipschitzWindow { lo: 2f64.powi(w), hi: 2f64.powi(w + 1), l: lo, big_l: hi }),
        }
    }
    let bilipschitz = windows.iter().all(|w| w.l > 0.0 && w.big_l.is_finite());
    let has_margin = path.rho.is_some();
    let c0 = decay.pass && bounds.pass && monotone.pass && continuous;
    let strict = has_margin && decay.pass && bounds.pass && strict_increase.pass && bilipschitz;
    Ok(PathReport { decay, bounds, strict_increase, windows, bilipschitz, monotone, continuous, midpoint_decay, has_margin, strict, c0 })
}
