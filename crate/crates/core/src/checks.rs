//! Small-gain conditions and how to probe them.
//!
//! Conditions quantified over the whole cone are probed on a deterministic
//! sample stream and reported as `Evidence`; `Pass` is reserved for checks that
//! are decidable for the class at hand (cycle gains of max-type networks,
//! the spectral condition for homogeneous operators).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cone::{coercivity_check, ConeError, ConeVec, CoercivityViolation};
use crate::dynamics::{cofinality_witness, min_fixed_point, Cofinality, DynamicsError, GainOperator, StopReason, StopRule, Wrapper};
use crate::kinfty::{envelope, KFun, KFunError, MonotoneSamples, Side};
use crate::network::{Direction, GainNetwork};

/// Samples used to test positive homogeneity before the spectral check.
const HOMOGENEITY_SAMPLES: usize = 100;

/// Dimension up to which NJI samples are also tried restricted to each ancestor set.
const MASK_DIM_LIMIT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error("cycle-gain check needs max aggregation at every node")]
    RequiresMaxType,
    #[error("operator is not positively homogeneous (residual {residual:e})")]
    NotHomogeneous { residual: f64 },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("n = {given} is below the graph diameter {diameter}")]
    DiameterTooLarge { diameter: usize, given: usize },
    #[error("operator with a restriction wrapper has no graph to probe")]
    RestrictedOperator,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    KFun(#[from] KFunError),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Nji,
    UniformNji,
    MaxMbi,
    CycleGain,
    Spectral,
    Ugs,
    Gatt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Evidence,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// `n` and `δ` that worked for every sample.
    UniformNji { n: usize, delta: f64 },
    /// Above-fit of `r ↦ ‖s_*(r𝟙)‖` on the probed grid.
    MbiFit { phi: KFun },
    /// Worst `c(r)/r` over checked cycle compositions `c`.
    Cycles { count: usize, complete: bool, worst_ratio: f64 },
    Spectral { n: usize, norm: f64 },
    Rays { count: usize },
}

/// Data that re-verifies a failure; see [`verify_counterexample`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Counterexample {
    /// `s > 0` with `T(s) ≥ s`.
    NonDecay { s: ConeVec, image: ConeVec },
    /// No `j ∈ N⁻_node(n)` with `T_j(s) < s_j`.
    NoDecayingNeighbor { s: ConeVec, node: usize, n: usize },
    /// Smallest usable `δ` over the samples fell below the grid.
    DeltaBelowGrid { s: ConeVec, node: usize, n: usize, best_delta: f64 },
    /// `Γ_b` iterated from `b = r𝟙` left the divergence bound.
    Divergence { r: f64, norm: f64, steps: usize },
    /// Cycle composition `c` with `c(r) ≥ r`.
    Cycle { nodes: Vec<usize>, r: f64, value: f64 },
    /// `‖Tⁿ(𝟙)‖ ≥ 1` for all `n ≤ norms.len()`.
    SpectralGrowth { norms: Vec<f64>, growth_ratio: f64 },
    /// `Tⁿ(r𝟙)` diverged or settled at a nonzero limit.
    NoAttraction { r: f64, norm: f64, diverged: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub used: usize,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgcVerdict {
    pub condition: Condition,
    pub status: Status,
    /// Set on `Fail` when the check ran out of range rather than refuting the condition.
    pub inconclusive: bool,
    pub witness: Option<Witness>,
    pub counterexample: Option<Counterexample>,
    pub budget: Budget,
}

impl SgcVerdict {
    fn new(condition: Condition, status: Status, used: usize, limit: usize) -> Self {
        SgcVerdict { condition, status, inconclusive: false, witness: None, counterexample: None, budget: Budget { used, limit } }
    }

    fn fail(condition: Condition, cx: Counterexample, used: usize, limit: usize) -> Self {
        SgcVerdict { counterexample: Some(cx), ..Self::new(condition, Status::Fail, used, limit) }
    }

    pub fn is_fail(&self) -> bool {
        self.status == Status::Fail
    }

    /// `Pass` or `Evidence`.
    pub fn is_passing(&self) -> bool {
        matches!(self.status, Status::Pass | Status::Evidence)
    }
}

/// Independent random stream number `stream` derived from `seed`.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Deterministic cone sampler: a fixed prefix (`𝟙`, unit vectors, rays over
/// the norm range) followed by seeded random draws. Nonzero entries always
/// lie in `[range.0, range.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sampler {
    pub seed: u64,
    pub budget: usize,
    pub range: (f64, f64),
}

impl Sampler {
    pub fn new(seed: u64, budget: usize, range: (f64, f64)) -> Self {
        Sampler { seed, budget, range }
    }

    pub fn iter(&self, dim: usize) -> SampleIter {
        let (lo, hi) = self.range;
        let mut prefix = vec![vec![1.0f64.clamp(lo, hi); dim]];
        for i in 0..dim.min(64) {
            let mut v = vec![0.0; dim];
            v[i] = 1.0f64.clamp(lo, hi);
            prefix.push(v);
        }
        for k in 0..9 {
            prefix.push(vec![lo * (hi / lo).powf(k as f64 / 8.0); dim]);
        }
        prefix.reverse();
        SampleIter { rng: derived_rng(self.seed, 0), prefix, dim, left: self.budget, range: self.range, k: 0 }
    }
}

pub struct SampleIter {
    rng: ChaCha8Rng,
    prefix: Vec<Vec<f64>>,
    dim: usize,
    left: usize,
    range: (f64, f64),
    k: usize,
}

impl Iterator for SampleIter {
    type Item = ConeVec;

    fn next(&mut self) -> Option<ConeVec> {
        if self.left == 0 || self.dim == 0 {
            return None;
        }
        self.left -= 1;
        if let Some(v) = self.prefix.pop() {
            return Some(ConeVec::from_trusted(v));
        }
        let (lo, hi) = self.range;
        let rng = &mut self.rng;
        let draw = |rng: &mut ChaCha8Rng| lo * (hi / lo).powf(rng.random::<f64>());
        self.k += 1;
        let v: Vec<f64> = match self.k % 4 {
            0 => (0..self.dim).map(|_| draw(rng)).collect(),
            1 => {
                let mut v: Vec<f64> = (0..self.dim).map(|_| if rng.random::<bool>() { draw(rng) } else { 0.0 }).collect();
                if v.iter().all(|&x| x == 0.0) {
                    let i = rng.random_range(0..self.dim);
                    v[i] = draw(rng);
                }
                v
            }
            2 => {
                let t = draw(rng);
                (0..self.dim).map(|_| (t * (0.9 + 0.2 * rng.random::<f64>())).clamp(lo, hi)).collect()
            }
            _ => {
                let t = draw(rng);
                let i = rng.random_range(0..self.dim);
                (0..self.dim)
                    .map(|j| if j == i { t } else if rng.random::<bool>() { (t * rng.random::<f64>()).clamp(lo, hi) } else { 0.0 })
                    .collect()
            }
        };
        Some(ConeVec::from_trusted(v))
    }
}

fn probe_network(op: &GainOperator) -> Result<&GainNetwork, CheckError> {
    if op.wrappers().iter().any(|w| matches!(w, Wrapper::Restrict(_))) {
        return Err(CheckError::RestrictedOperator);
    }
    Ok(op.network())
}

fn dominates(image: &[f64], s: &[f64]) -> bool {
    image.iter().zip(s).all(|(a, b)| a >= b)
}

/// No joint increase: samples `s > 0` looking for `T(s) ≥ s`.
///
/// For small networks each sample is also tried restricted to the ancestor set
/// of every node, which is where joint increase hides when only part of the
/// network fails to decay.
pub fn nji_probe(op: &GainOperator, sampler: &Sampler) -> Result<SgcVerdict, CheckError> {
    let net = probe_network(op)?;
    let dim = op.dim();
    let mut masks: Vec<Vec<usize>> = Vec::new();
    if dim <= MASK_DIM_LIMIT {
        for i in 0..dim {
            let a = net.graph().neighborhood(i, usize::MAX, Direction::In);
            if a.len() < dim && !masks.contains(&a) {
                masks.push(a);
            }
        }
    }
    let mut used = 0;
    for s in sampler.iter(dim) {
        used += 1;
        let mut candidates = vec![s.clone()];
        for m in &masks {
            let v = s.mask(m)?;
            if !v.is_zero() && v != s {
                candidates.push(v);
            }
        }
        for v in candidates {
            if v.is_zero() {
                continue;
            }
            let image = op.apply_raw(v.as_slice());
            if dominates(&image, v.as_slice()) {
                let cx = Counterexample::NonDecay { s: v, image: ConeVec::from_trusted(image) };
                return Ok(SgcVerdict::fail(Condition::Nji, cx, used, sampler.budget));
            }
        }
    }
    Ok(SgcVerdict::new(Condition::Nji, Status::Evidence, used, sampler.budget))
}

/// Parameters of the uniform no-joint-increase probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformNjiParams {
    /// Only samples with `‖s‖ ≤ r` count.
    pub r: f64,
    /// Only nodes with `s_i ≥ ε` are tested.
    pub eps: f64,
    pub n_max: usize,
    /// Candidate `δ` values.
    pub delta_grid: Vec<f64>,
}

impl UniformNjiParams {
    /// `δ ∈ {2⁻⁸, …, 1}`.
    pub fn dyadic(r: f64, eps: f64, n_max: usize) -> Self {
        UniformNjiParams { r, eps, n_max, delta_grid: (0..=8).map(|k| 2f64.powi(-k)).collect() }
    }

    /// `δ ∈ ε·{2⁻⁸, …, 1}`.
    pub fn relative(r: f64, eps: f64, n_max: usize) -> Self {
        UniformNjiParams { r, eps, n_max, delta_grid: (0..=8).map(|k| eps * 2f64.powi(-k)).collect() }
    }
}

/// Uniform NJI: for every sample with `‖s‖ ≤ r` and node `i` with `s_i ≥ ε`,
/// some `j ∈ N⁻_i(n)` has `s_j ≥ δ` and `T_j(s) < s_j`. Reports the smallest
/// `n ≤ n_max` and largest grid `δ` that work for all samples.
pub fn uniform_nji_probe(op: &GainOperator, params: &UniformNjiParams, sampler: &Sampler) -> Result<SgcVerdict, CheckError> {
    let net = probe_network(op)?;
    let UniformNjiParams { r, eps, n_max, ref delta_grid } = *params;
    if n_max == 0 || delta_grid.is_empty() || delta_grid.iter().any(|d| !(*d > 0.0)) {
        return Err(CheckError::BadParameter("need n_max ≥ 1 and a positive δ grid".into()));
    }
    let dmin = delta_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let dim = op.dim();
    let balls: Vec<Vec<(usize, usize)>> = (0..dim).map(|i| net.graph().distances(i, n_max, Direction::In)).collect();
    // worst[n-1] = min over (s, i) of the best δ available within n steps
    let mut worst = vec![f64::INFINITY; n_max];
    let mut worst_at: Vec<Option<(ConeVec, usize)>> = vec![None; n_max];
    let mut used = 0;
    for s in sampler.iter(dim) {
        if s.norm() > r {
            continue;
        }
        used += 1;
        let image = op.apply_raw(s.as_slice());
        for i in 0..dim {
            if s[i] < eps {
                continue;
            }
            let mut best = vec![f64::NEG_INFINITY; n_max + 1];
            for &(j, d) in &balls[i] {
                if image[j] < s[j] {
                    best[d] = best[d].max(s[j]);
                }
            }
            let mut acc = f64::NEG_INFINITY;
            for n in 1..=n_max {
                acc = acc.max(best[n]).max(if n == 1 { best[0] } else { f64::NEG_INFINITY });
                if acc < worst[n - 1] {
                    worst[n - 1] = acc;
                    worst_at[n - 1] = Some((s.clone(), i));
                }
            }
            if acc == f64::NEG_INFINITY {
                let cx = Counterexample::NoDecayingNeighbor { s, node: i, n: n_max };
                let mut v = SgcVerdict::fail(Condition::UniformNji, cx, used, sampler.budget);
                // a larger n could still reach a decaying ancestor
                v.inconclusive = n_max + 1 < dim;
                return Ok(v);
            }
        }
    }
    if let Some(n) = (1..=n_max).find(|&n| worst[n - 1] >= dmin) {
        let delta = delta_grid.iter().copied().filter(|&d| d <= worst[n - 1]).fold(0.0, f64::max);
        let mut v = SgcVerdict::new(Condition::UniformNji, Status::Evidence, used, sampler.budget);
        v.witness = Some(Witness::UniformNji { n, delta });
        return Ok(v);
    }
    match worst_at[n_max - 1].take() {
        Some((s, node)) => {
            let cx = Counterexample::DeltaBelowGrid { s, node, n: n_max, best_delta: worst[n_max - 1] };
            let mut v = SgcVerdict::fail(Condition::UniformNji, cx, used, sampler.budget);
            v.inconclusive = true;
            Ok(v)
        }
        // no sample qualified
        None => Ok(SgcVerdict::new(Condition::UniformNji, Status::Evidence, used, sampler.budget)),
    }
}

/// `⊕`-MBI on rays: `s_*(r𝟙)` must stay bounded; the fitted `φ` bounds `‖s_*(r𝟙)‖`.
/// Checking `b = r𝟙` suffices since any `b` lies below `‖b‖·𝟙`.
pub fn max_mbi_probe(op: &GainOperator, r_grid: &[f64], rule: &StopRule) -> Result<SgcVerdict, CheckError> {
    let n = r_grid.len();
    let mut norms = Vec::with_capacity(n);
    for (k, &r) in r_grid.iter().enumerate() {
        let fp = min_fixed_point(op, &ConeVec::ray(op.dim(), r)?, rule)?;
        match fp.stop {
            StopReason::Diverged { norm, .. } => {
                let cx = Counterexample::Divergence { r, norm, steps: fp.iterations };
                return Ok(SgcVerdict::fail(Condition::MaxMbi, cx, k + 1, n));
            }
            StopReason::MaxIter { .. } => return Ok(SgcVerdict::new(Condition::MaxMbi, Status::Inconclusive, k + 1, n)),
            StopReason::Converged { .. } => norms.push(fp.point.norm()),
        }
    }
    let mut v = SgcVerdict::new(Condition::MaxMbi, Status::Evidence, n, n);
    if n > 0 {
        let phi = envelope(&MonotoneSamples::upper_hull(r_grid.to_vec(), norms)?, Side::Above)?;
        v.witness = Some(Witness::MbiFit { phi });
    }
    Ok(v)
}

/// Composition of `(id + ρ) ∘ γ` around `cycle`, starting at its first node.
pub fn cycle_composition(net: &GainNetwork, cycle: &[usize], rho: Option<&KFun>) -> KFun {
    let idp = rho.map(KFun::id_plus);
    let mut acc = KFun::identity();
    for k in 0..cycle.len() {
        let (from, to) = (cycle[k], cycle[(k + 1) % cycle.len()]);
        let g = net.gain(from, to).expect("cycle follows edges");
        let g = match &idp {
            Some(p) => p.compose(g),
            None => g.clone(),
        };
        acc = g.compose(&acc);
    }
    acc
}

/// First `r > 0` with `c(r) ≥ r`, testing the grid and then every breakpoint and the tail.
fn cycle_violation(c: &KFun, grid: &[f64]) -> Option<(f64, f64)> {
    let bad = |r: f64| c.eval(r) >= r;
    if let Some(&r) = grid.iter().find(|&&r| bad(r)) {
        return Some((r, c.eval(r)));
    }
    if let Some((x, y)) = c.points().skip(1).find(|&(x, y)| y >= x) {
        return Some((x, y));
    }
    if c.slopes()[0] >= 1.0 {
        let r = c.xs().get(1).map_or(1.0, |x| x / 2.0);
        return Some((r, c.eval(r)));
    }
    let (xl, yl) = c.points().last().unwrap();
    let t = c.final_slope();
    if t > 1.0 || (t == 1.0 && yl >= xl) {
        let r = if t > 1.0 { xl + 2.0 * (xl - yl).max(0.0) / (t - 1.0) + 1.0 } else { xl + 1.0 };
        return Some((r, c.eval(r)));
    }
    None
}

/// Max-type cycle condition: every cycle composition of `(id + ρ) ∘ γ` is `< id`.
pub fn cycle_gain_check(net: &GainNetwork, rho: Option<&KFun>, grid: &[f64], budget: usize) -> Result<SgcVerdict, CheckError> {
    if !net.is_max_type() {
        return Err(CheckError::RequiresMaxType);
    }
    let (cycles, complete) = net.graph().simple_cycles(budget);
    let mut worst: f64 = 0.0;
    for (k, cyc) in cycles.iter().enumerate() {
        let c = cycle_composition(net, cyc, rho);
        if let Some((r, value)) = cycle_violation(&c, grid) {
            let cx = Counterexample::Cycle { nodes: cyc.clone(), r, value };
            return Ok(SgcVerdict::fail(Condition::CycleGain, cx, k + 1, budget));
        }
        worst = grid.iter().map(|&r| c.eval(r) / r).fold(worst, f64::max);
    }
    let status = if complete { Status::Pass } else { Status::Evidence };
    let mut v = SgcVerdict::new(Condition::CycleGain, status, cycles.len(), budget);
    v.witness = Some(Witness::Cycles { count: cycles.len(), complete, worst_ratio: worst });
    Ok(v)
}

/// `inf_n ‖Tⁿ(𝟙)‖ < 1` for positively homogeneous `T`, by power iteration up to `n_max`.
pub fn spectral_condition(op: &GainOperator, n_max: usize, seed: u64) -> Result<SgcVerdict, CheckError> {
    let dim = op.dim();
    let mut rng = derived_rng(seed, 1);
    let mut residual: f64 = 0.0;
    for _ in 0..HOMOGENEITY_SAMPLES {
        let s: Vec<f64> = (0..dim).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let lhs = op.apply_raw(&s.iter().map(|x| a * x).collect::<Vec<_>>());
        let rhs: Vec<f64> = op.apply_raw(&s).iter().map(|x| a * x).collect();
        let scale = rhs.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        residual = lhs.iter().zip(&rhs).map(|(x, y)| (x - y).abs() / scale).fold(residual, f64::max);
    }
    if residual > 1e-10 {
        return Err(CheckError::NotHomogeneous { residual });
    }
    let mut v = vec![1.0; dim];
    let mut norms = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        v = op.apply_raw(&v);
        let norm = v.iter().copied().fold(0.0, f64::max);
        if norm < 1.0 {
            let mut out = SgcVerdict::new(Condition::Spectral, Status::Pass, n, n_max);
            out.witness = Some(Witness::Spectral { n, norm });
            return Ok(out);
        }
        norms.push(norm);
    }
    let half = n_max / 2;
    let growth_ratio = if n_max >= 2 && norms[half - 1] > 0.0 {
        (norms[n_max - 1] / norms[half - 1]).powf(1.0 / (n_max - half) as f64)
    } else {
        norms.last().copied().unwrap_or(f64::NAN)
    };
    let mut out = SgcVerdict::fail(Condition::Spectral, Counterexample::SpectralGrowth { norms, growth_ratio }, n_max, n_max);
    out.inconclusive = true;
    Ok(out)
}

/// Re-checks a counterexample against `op`.
pub fn verify_counterexample(op: &GainOperator, cx: &Counterexample, rule: &StopRule) -> Result<bool, CheckError> {
    Ok(match cx {
        Counterexample::NonDecay { s, .. } => !s.is_zero() && dominates(&op.apply(s)?.into_vec(), s.as_slice()),
        Counterexample::NoDecayingNeighbor { s, node, n } => {
            let image = op.apply(s)?;
            let net = probe_network(op)?;
            net.graph().neighborhood(*node, *n, Direction::In).iter().all(|&j| image[j] >= s[j])
        }
        Counterexample::DeltaBelowGrid { s, node, n, best_delta } => {
            let image = op.apply(s)?;
            let net = probe_network(op)?;
            let best = net
                .graph()
                .neighborhood(*node, *n, Direction::In)
                .iter()
                .filter(|&&j| image[j] < s[j])
                .map(|&j| s[j])
                .fold(f64::NEG_INFINITY, f64::max);
            best == *best_delta
        }
        Counterexample::Divergence { r, .. } => {
            let fp = min_fixed_point(op, &ConeVec::ray(op.dim(), *r)?, rule)?;
            matches!(fp.stop, StopReason::Diverged { .. })
        }
        Counterexample::Cycle { nodes, r, .. } => {
            let idp = op.wrappers().iter().find_map(|w| match w {
                Wrapper::EnlargeLeft { rho, .. } => Some(rho.clone()),
                _ => None,
            });
            cycle_composition(op.network(), nodes, idp.as_ref()).eval(*r) >= *r
        }
        Counterexample::SpectralGrowth { norms, .. } => {
            let mut v = vec![1.0; op.dim()];
            norms.iter().all(|_| {
                v = op.apply_raw(&v);
                v.iter().copied().fold(0.0, f64::max) >= 1.0
            })
        }
        Counterexample::NoAttraction { r, .. } => {
            let t = crate::dynamics::iterate(op, &ConeVec::ray(op.dim(), *r)?, rule)?;
            let last = t.states.last().unwrap().norm();
            matches!(t.stop, StopReason::Diverged { .. }) || last > crate::dynamics::GATT_RATIO * r
        }
    })
}

/// `δ` recursion for the modulus `ω` of `T`.
///
/// If `T_j(s) ≥ s_j − δ` for all `j ∈ N⁻_i(n − 1)`, then `Tⁿ_i(s) ≥ s_i − ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusChain {
    pub n: usize,
    pub eps: f64,
    /// `ε_1, …, ε_{n−1}` with `ε_{l−1} = δ_l / 2`.
    pub epsilons: Vec<f64>,
    /// `δ_1, …, δ_n` with `δ_n = ε`.
    pub deltas: Vec<f64>,
    /// `δ_1`.
    pub delta: f64,
    /// Set when the modulus was estimated from samples rather than declared.
    pub empirical: bool,
}

pub fn delta_chain(modulus: &KFun, n: usize, eps: f64) -> Result<ModulusChain, CheckError> {
    if n == 0 || !(eps > 0.0 && eps.is_finite()) {
        return Err(CheckError::BadParameter(format!("delta chain needs n ≥ 1 and ε > 0 (n={n}, ε={eps})")));
    }
    let inv = modulus.inverse();
    let mut deltas = vec![0.0; n];
    let mut epsilons = vec![0.0; n.saturating_sub(1)];
    deltas[n - 1] = eps;
    for l in (1..n).rev() {
        // l is 1-based: ε_l = δ_{l+1} / 2, δ_l = ω⁻¹(ε_l)
        epsilons[l - 1] = deltas[l] / 2.0;
        deltas[l - 1] = inv.eval(epsilons[l - 1]);
    }
    if n > 1 {
        deltas[0] = epsilons.iter().copied().fold(deltas[0], f64::min);
    }
    Ok(ModulusChain { n, eps, delta: deltas[0], epsilons, deltas, empirical: false })
}

/// Estimates `ω(d) ≥ sup ‖T(s) − T(t)‖` over sampled pairs with `‖s − t‖ ≤ d`
/// and `‖s‖, ‖t‖ ≤ radius`. The result is evidence, not a bound.
pub fn empirical_modulus(op: &GainOperator, radius: f64, pairs: usize, seed: u64) -> Result<KFun, CheckError> {
    let dim = op.dim();
    let mut rng = derived_rng(seed, 2);
    let ds: Vec<f64> = (0..24).map(|k| radius * 2f64.powi(k - 23)).collect();
    let mut worst = vec![0.0; ds.len()];
    for _ in 0..pairs {
        let k = rng.random_range(0..ds.len());
        let s: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * radius).collect();
        let t: Vec<f64> = s.iter().map(|x| (x + (2.0 * rng.random::<f64>() - 1.0) * ds[k]).clamp(0.0, radius)).collect();
        let gap = op.apply_raw(&s).iter().zip(op.apply_raw(&t)).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        let d = sup_gap(&s, &t);
        let bin = ds.partition_point(|&x| x < d).min(ds.len() - 1);
        worst[bin] = f64::max(worst[bin], gap);
    }
    let zs: Vec<f64> = worst.iter().map(|&w| w.max(f64::MIN_POSITIVE)).collect();
    Ok(envelope(&MonotoneSamples::upper_hull(ds, zs)?, Side::Above)?)
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Coercivity bound for the decay set of a strongly connected network:
/// `min_i s_i ≥ φ(‖s‖)` on `Ψ(Γ)` with `φ = min_{0 ≤ l ≤ n} (ξ ∘ η)^l`, `n` at least the diameter.
pub fn decayset_coercivity(net: &GainNetwork, n_diam: usize) -> Result<KFun, CheckError> {
    let diameter = net.graph().diameter().ok_or(CheckError::NotStronglyConnected)?;
    if n_diam < diameter {
        return Err(CheckError::DiameterTooLarge { diameter, given: n_diam });
    }
    let Some(eta) = net.eta() else {
        return Ok(KFun::identity());
    };
    let step = net.xi().compose(eta);
    let mut phi = KFun::identity();
    let mut pow = KFun::identity();
    for _ in 0..n_diam {
        pow = step.compose(&pow);
        phi = phi.min(&pow);
    }
    Ok(phi)
}

/// Checks `φ` on decay points `lim Γ̂ⁿ(s)` reached from sampled starts.
/// Returns the number of decay points checked.
pub fn validate_coercivity(op: &GainOperator, phi: &KFun, sampler: &Sampler, rule: &StopRule) -> Result<Result<usize, CoercivityViolation>, CheckError> {
    let mut pts = Vec::new();
    for s in sampler.iter(op.dim()) {
        if let Cofinality::Witness { point, .. } = cofinality_witness(op, &s, rule)? {
            pts.push(point);
        }
    }
    Ok(coercivity_check(&pts, phi).map(|_| pts.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Maf;

    fn lin(k: f64) -> KFun {
        KFun::linear(k).unwrap()
    }

    fn two_node(k: f64, maf: Maf) -> GainNetwork {
        GainNetwork::new(2, vec![(0, 1, lin(k)), (1, 0, lin(k))], vec![maf]).unwrap()
    }

    fn op(net: GainNetwork) -> GainOperator {
        net.into()
    }

    fn grid() -> Vec<f64> {
        (-10..=10).map(|k| 2f64.powi(k)).collect()
    }

    #[test]
    fn nji_examples() {
        let s = Sampler::new(0, 500, (1e-3, 1e3));
        assert_eq!(nji_probe(&op(two_node(0.5, Maf::Max)), &s).unwrap().status, Status::Evidence);
        let v = nji_probe(&op(two_node(1.0, Maf::Max)), &s).unwrap();
        match v.counterexample {
            Some(Counterexample::NonDecay { s, .. }) => assert_eq!(s, ConeVec::ones(2)),
            other => panic!("{other:?}"),
        }
        let b = op(two_node(2.0, Maf::Max));
        let v = nji_probe(&b, &s).unwrap();
        assert!(v.is_fail());
        assert!(verify_counterexample(&b, v.counterexample.as_ref().unwrap(), &StopRule::default()).unwrap());
    }

    #[test]
    fn sampler_prefix_and_budget() {
        let s = Sampler::new(7, 3, (0.5, 2.0));
        let v: Vec<ConeVec> = s.iter(2).collect();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], ConeVec::ones(2));
        let again: Vec<ConeVec> = s.iter(2).collect();
        assert_eq!(v, again);
        for x in Sampler::new(1, 200, (0.5, 2.0)).iter(3) {
            assert!(x.as_slice().iter().all(|&e| e == 0.0 || (0.5..=2.0).contains(&e)));
        }
    }

    #[test]
    fn uniform_nji_net_a() {
        let s = Sampler::new(0, 2000, (0.5, 1.0));
        let v = uniform_nji_probe(&op(two_node(0.5, Maf::Max)), &UniformNjiParams::dyadic(1.0, 0.5, 2), &s).unwrap();
        assert_eq!(v.witness, Some(Witness::UniformNji { n: 1, delta: 0.5 }));
        let v = uniform_nji_probe(&op(two_node(2.0, Maf::Max)), &UniformNjiParams::dyadic(1.0, 0.5, 2), &s).unwrap();
        assert!(v.is_fail() && !v.inconclusive);
    }

    #[test]
    fn mbi_examples() {
        let v = max_mbi_probe(&op(two_node(0.5, Maf::Max)), &grid(), &StopRule::default()).unwrap();
        assert_eq!(v.status, Status::Evidence);
        assert_eq!(v.witness, Some(Witness::MbiFit { phi: KFun::identity() }));
        let b = op(two_node(2.0, Maf::Max));
        let v = max_mbi_probe(&b, &grid(), &StopRule::default()).unwrap();
        assert!(matches!(v.counterexample, Some(Counterexample::Divergence { .. })));
        assert!(verify_counterexample(&b, v.counterexample.as_ref().unwrap(), &StopRule::default()).unwrap());
    }

    #[test]
    fn cycle_gain_examples() {
        let net = two_node(0.5, Maf::Max);
        let v = cycle_gain_check(&net, Some(&lin(0.1)), &grid(), 10_000).unwrap();
        assert_eq!(v.status, Status::Pass);
        match v.witness {
            Some(Witness::Cycles { count: 1, complete: true, worst_ratio }) => assert!((worst_ratio - 0.3025).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let v = cycle_gain_check(&two_node(1.0, Maf::Max), None, &grid(), 10_000).unwrap();
        assert!(v.is_fail());
        assert!(matches!(cycle_gain_check(&two_node(0.5, Maf::Sum), None, &grid(), 10), Err(CheckError::RequiresMaxType)));
        // slope above one only beyond the grid is still caught
        let g = KFun::new(vec![(0.0, 0.0), (1e4, 5e3)], 3.0).unwrap();
        let net = GainNetwork::new(2, vec![(0, 1, g), (1, 0, lin(1.0))], vec![Maf::Max]).unwrap();
        let v = cycle_gain_check(&net, None, &grid(), 100).unwrap();
        let o: GainOperator = net.into();
        assert!(verify_counterexample(&o, v.counterexample.as_ref().unwrap(), &StopRule::default()).unwrap());
    }

    #[test]
    fn spectral_examples() {
        let v = spectral_condition(&op(two_node(0.5, Maf::Max)), 64, 0).unwrap();
        assert_eq!(v.witness, Some(Witness::Spectral { n: 1, norm: 0.5 }));
        let v = spectral_condition(&op(two_node(2.0, Maf::Max)), 64, 0).unwrap();
        assert!(v.is_fail() && v.inconclusive);
        match v.counterexample {
            Some(Counterexample::SpectralGrowth { growth_ratio, .. }) => assert!((growth_ratio - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let g = KFun::new(vec![(0.0, 0.0), (1.0, 0.5)], 0.1).unwrap();
        let net = GainNetwork::new(2, vec![(0, 1, g.clone()), (1, 0, g)], vec![Maf::Max]).unwrap();
        assert!(matches!(spectral_condition(&op(net), 64, 0), Err(CheckError::NotHomogeneous { .. })));
    }

    #[test]
    fn delta_chain_examples() {
        let c = delta_chain(&KFun::identity(), 2, 1.0).unwrap();
        assert_eq!((c.epsilons[0], c.delta), (0.5, 0.5));
        assert_eq!(delta_chain(&lin(2.0), 2, 1.0).unwrap().delta, 0.25);
        assert_eq!(delta_chain(&lin(2.0), 1, 0.3).unwrap().delta, 0.3);
        let c = delta_chain(&lin(2.0), 4, 1.0).unwrap();
        assert_eq!(c.deltas[3], 1.0);
        for l in 1..4 {
            assert_eq!(c.epsilons[l - 1], c.deltas[l] / 2.0);
        }
        assert!(delta_chain(&lin(1.0), 0, 1.0).is_err());
    }

    #[test]
    fn empirical_modulus_bounds_linear_gain() {
        let o = op(two_node(0.5, Maf::Max));
        let w = empirical_modulus(&o, 10.0, 2000, 0).unwrap();
        assert!(w.eval(1.0) <= 0.5 + 1e-9);
    }

    #[test]
    fn coercivity_examples() {
        assert_eq!(decayset_coercivity(&two_node(0.5, Maf::Max), 1).unwrap(), lin(0.5));
        let ring = GainNetwork::new(3, vec![(0, 1, lin(0.5)), (1, 2, lin(0.5)), (2, 0, lin(0.5))], vec![Maf::Max]).unwrap();
        assert_eq!(decayset_coercivity(&ring, 3).unwrap().eval(1.0), 0.125);
        assert!(matches!(decayset_coercivity(&ring, 1), Err(CheckError::DiameterTooLarge { .. })));
        assert_eq!(decayset_coercivity(&two_node(1.0, Maf::Max), 1).unwrap(), KFun::identity());
        let chain = GainNetwork::new(2, vec![(0, 1, lin(0.5))], vec![Maf::Max]).unwrap();
        assert!(matches!(decayset_coercivity(&chain, 5), Err(CheckError::NotStronglyConnected)));
        let o = op(ring.clone());
        let phi = decayset_coercivity(&ring, 3).unwrap();
        let checked = validate_coercivity(&o, &phi, &Sampler::new(0, 200, (1e-2, 1e2)), &StopRule::default()).unwrap();
        assert!(checked.unwrap() > 0);
    }
}
