//! Piecewise-linear class-K∞ functions.
//!
//! A [`KFun`] is a continuous, strictly increasing map `[0, ∞) → [0, ∞)` with
//! `f(0) = 0`, stored as breakpoints `(x_k, y_k)` starting at the origin plus a
//! positive slope used beyond the last breakpoint. Every operation here
//! (inverse, composition, sums, pointwise extrema) stays inside this class, so
//! results are exact up to floating-point rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slope floor used when fitting envelopes to flat data.
pub const ENVELOPE_SLOPE_FLOOR: f64 = 1e-9;

/// Default number of log-spaced breakpoints used to discretize named gain families.
pub const DEFAULT_FAMILY_POINTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KFunError {
    #[error("function must start at the origin, got ({0}, {1})")]
    NotAnchored(f64, f64),
    #[error("breakpoints not strictly increasing at index {index}")]
    NotIncreasing { index: usize },
    #[error("final slope must be positive and finite, got {0}")]
    BadFinalSlope(f64),
    #[error("non-finite breakpoint at index {0}")]
    NonFinite(usize),
    #[error("argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("scale factor must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("samples rejected: {0}")]
    BadSamples(String),
    #[error("sampled function vanishes at r = {0} > 0")]
    ZeroSample(f64),
    #[error("factorization residual {residual:e} exceeds tolerance")]
    FactorResidual { residual: f64 },
    #[error("invalid gain descriptor: {0}")]
    BadDescriptor(String),
}

/// Strictly increasing piecewise-linear function with `f(0) = 0`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KFunRepr", into = "KFunRepr")]
pub struct KFun {
    xs: Vec<f64>,
    ys: Vec<f64>,
    // slopes[k] is the slope on [xs[k], xs[k+1]); the last entry is the tail slope.
    slopes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KFunRepr {
    points: Vec<[f64; 2]>,
    final_slope: f64,
}

impl TryFrom<KFunRepr> for KFun {
    type Error = KFunError;
    fn try_from(r: KFunRepr) -> Result<Self, Self::Error> {
        KFun::new(r.points.iter().map(|p| (p[0], p[1])).collect(), r.final_slope)
    }
}

impl From<KFun> for KFunRepr {
    fn from(f: KFun) -> Self {
        KFunRepr {
            points: f.xs.iter().zip(&f.ys).map(|(&x, &y)| [x, y]).collect(),
            final_slope: f.final_slope(),
        }
    }
}

impl fmt::Debug for KFun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KFun[")?;
        for (x, y) in self.points() {
            write!(f, "({x}, {y}) ")?;
        }
        write!(f, "tail {}]", self.final_slope())
    }
}

impl KFun {
    /// Builds a function from breakpoints and the slope past the last one.
    pub fn new(points: Vec<(f64, f64)>, final_slope: f64) -> Result<Self, KFunError> {
        let Some(&(x0, y0)) = points.first() else {
            return Err(KFunError::NotAnchored(f64::NAN, f64::NAN));
        };
        if x0 != 0.0 || y0 != 0.0 {
            return Err(KFunError::NotAnchored(x0, y0));
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(KFunError::NonFinite(i));
            }
            if i > 0 {
                let (px, py) = points[i - 1];
                if !(x > px && y > py) {
                    return Err(KFunError::NotIncreasing { index: i });
                }
            }
        }
        if !(final_slope.is_finite() && final_slope > 0.0) {
            return Err(KFunError::BadFinalSlope(final_slope));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        Ok(Self::from_parts(xs, ys, final_slope))
    }

    fn from_parts(xs: Vec<f64>, ys: Vec<f64>, tail: f64) -> Self {
        let mut slopes: Vec<f64> = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect();
        slopes.push(tail);
        KFun { xs, ys, slopes }
    }

    /// Builds from points produced by internal arithmetic, dropping points that
    /// rounding made non-increasing.
    fn from_raw(points: Vec<(f64, f64)>, tail: f64) -> Result<Self, KFunError> {
        let mut xs = vec![0.0];
        let mut ys = vec![0.0];
        for (x, y) in points {
            let (px, py) = (*xs.last().unwrap(), *ys.last().unwrap());
            if !x.is_finite() || !y.is_finite() {
                return Err(KFunError::NonFinite(xs.len()));
            }
            if x > px * (1.0 + 1e-14) && x > px && y > py {
                xs.push(x);
                ys.push(y);
            }
        }
        if !(tail.is_finite() && tail > 0.0) {
            return Err(KFunError::BadFinalSlope(tail));
        }
        Ok(Self::from_parts(xs, ys, tail))
    }

    /// `r ↦ k·r`.
    pub fn linear(k: f64) -> Result<Self, KFunError> {
        Self::new(vec![(0.0, 0.0)], k)
    }

    pub fn identity() -> Self {
        Self::from_parts(vec![0.0], vec![0.0], 1.0)
    }

    /// Breakpoints including the origin.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn final_slope(&self) -> f64 {
        *self.slopes.last().unwrap()
    }

    /// Segment slopes; the last entry is the final slope.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn min_slope(&self) -> f64 {
        self.slopes.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_slope(&self) -> f64 {
        self.slopes.iter().copied().fold(0.0, f64::max)
    }

    /// True when the function is `k·id` for some `k`.
    pub fn is_linear(&self) -> bool {
        let t = self.final_slope();
        self.slopes.iter().all(|&s| (s - t).abs() <= 1e-12 * t)
    }

    /// Evaluates at `r ≥ 0`.
    ///
    /// # Panics
    /// Panics on negative or NaN input; use [`KFun::try_eval`] for checked input.
    pub fn eval(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "KFun evaluated at negative argument {r}");
        let last = self.xs.len() - 1;
        let k = self.xs.partition_point(|&x| x <= r) - 1;
        let y = self.ys[k] + (r - self.xs[k]) * self.slopes[k];
        if k == last {
            y
        } else {
            // keeps evaluation monotone across breakpoints under rounding
            y.clamp(self.ys[k], self.ys[k + 1])
        }
    }

    pub fn try_eval(&self, r: f64) -> Result<f64, KFunError> {
        if r >= 0.0 {
            Ok(self.eval(r))
        } else {
            Err(KFunError::NegativeArgument(r))
        }
    }

    pub fn inverse(&self) -> KFun {
        Self::from_parts(self.ys.clone(), self.xs.clone(), 1.0 / self.final_slope())
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &KFun) -> KFun {
        let inv = inner.inverse();
        let mut pts: Vec<(f64, f64)> = inner
            .points()
            .skip(1)
            .map(|(x, gx)| (x, self.eval(gx)))
            .chain(self.points().skip(1).map(|(x, y)| (inv.eval(x), y)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_raw(pts, self.final_slope() * inner.final_slope())
            .expect("composition of K∞ functions is K∞")
    }

    /// n-fold self-composition; `n = 0` gives the identity.
    pub fn power(&self, n: usize) -> KFun {
        let mut acc = KFun::identity();
        for _ in 0..n {
            acc = self.compose(&acc);
        }
        acc
    }

    pub fn add(&self, other: &KFun) -> KFun {
        let pts = merge_xs(&self.xs, &other.xs)
            .into_iter()
            .skip(1)
            .map(|x| (x, self.eval(x) + other.eval(x)))
            .collect();
        Self::from_raw(pts, self.final_slope() + other.final_slope())
            .expect("sum of K∞ functions is K∞")
    }

    /// `id + self`.
    pub fn id_plus(&self) -> KFun {
        let pts = self.points().skip(1).map(|(x, y)| (x, x + y)).collect();
        Self::from_raw(pts, 1.0 + self.final_slope()).expect("id + K∞ is K∞")
    }

    pub fn scale(&self, c: f64) -> Result<KFun, KFunError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(KFunError::BadScale(c));
        }
        let pts = self.points().skip(1).map(|(x, y)| (x, c * y)).collect();
        Self::from_raw(pts, c * self.final_slope())
    }

    pub fn min(&self, other: &KFun) -> KFun {
        self.extremum(other, true)
    }

    pub fn max(&self, other: &KFun) -> KFun {
        self.extremum(other, false)
    }

    fn extremum(&self, other: &KFun, take_min: bool) -> KFun {
        let pick = |a: f64, b: f64| if take_min { a.min(b) } else { a.max(b) };
        let xs = merge_xs(&self.xs, &other.xs);
        let diff = |x: f64| self.eval(x) - other.eval(x);
        let mut pts = Vec::with_capacity(2 * xs.len());
        for w in xs.windows(2) {
            let (da, db) = (diff(w[0]), diff(w[1]));
            if da * db < 0.0 {
                let xc = w[0] + (w[1] - w[0]) * da / (da - db);
                if xc > w[0] && xc < w[1] {
                    pts.push((xc, pick(self.eval(xc), other.eval(xc))));
                }
            }
            pts.push((w[1], pick(self.eval(w[1]), other.eval(w[1]))));
        }
        let xl = *xs.last().unwrap();
        let dl = diff(xl);
        let sd = self.final_slope() - other.final_slope();
        if dl * sd < 0.0 {
            let xc = xl - dl / sd;
            pts.push((xc, pick(self.eval(xc), other.eval(xc))));
        }
        let tail = pick(self.final_slope(), other.final_slope());
        Self::from_raw(pts, tail).expect("extremum of K∞ functions is K∞")
    }

    /// Removes interior breakpoints where the slope does not change.
    pub fn simplify(&self) -> KFun {
        let mut xs = vec![0.0];
        let mut ys = vec![0.0];
        for k in 1..self.xs.len() {
            let (l, r) = (self.slopes[k - 1], self.slopes[k]);
            if (l - r).abs() > 1e-12 * l.max(r) {
                xs.push(self.xs[k]);
                ys.push(self.ys[k]);
            }
        }
        Self::from_parts(xs, ys, self.final_slope())
    }

    /// Largest deviation `|f(x) − g(x)|` over both breakpoint sets, scaled by `max(1, |f(x)|)`.
    pub fn distance(&self, other: &KFun) -> f64 {
        merge_xs(&self.xs, &other.xs)
            .into_iter()
            .map(|x| {
                let (a, b) = (self.eval(x), other.eval(x));
                (a - b).abs() / a.abs().max(1.0)
            })
            .fold((self.final_slope() - other.final_slope()).abs(), f64::max)
    }
}

fn merge_xs(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut xs: Vec<f64> = a.iter().chain(b).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// η with `(id + ρ)⁻¹ = id − η`.
pub fn sub_from_id(rho: &KFun) -> Result<KFun, KFunError> {
    let pts = rho.points().skip(1).map(|(x, r)| (x + r, r)).collect();
    let t = rho.final_slope();
    let eta = KFun::from_raw(pts, t / (1.0 + t))?;
    let residual = rho
        .points()
        .map(|(x, r)| {
            let y = x + r;
            (y - eta.eval(y) - x).abs() / y.max(1.0)
        })
        .fold(0.0, f64::max);
    if residual > 1e-12 {
        return Err(KFunError::FactorResidual { residual });
    }
    Ok(eta)
}

/// Splits `id + ρ = (id + ρ₁) ∘ (id + ρ₂)` with `ρ₂ = ρ/2`.
pub fn factor_id_plus(rho: &KFun) -> Result<(KFun, KFun), KFunError> {
    factor_id_plus_with(rho, 0.5)
}

/// Splits `id + ρ = (id + ρ₁) ∘ (id + ρ₂)` with `ρ₂ = fraction·ρ`, `0 < fraction < 1`.
///
/// `ρ₁ = (1 − fraction)·ρ ∘ (id + ρ₂)⁻¹`, which equals `(id + ρ) ∘ (id + ρ₂)⁻¹ − id`.
pub fn factor_id_plus_with(rho: &KFun, fraction: f64) -> Result<(KFun, KFun), KFunError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(KFunError::BadScale(fraction));
    }
    let rho2 = rho.scale(fraction)?;
    let rho1 = rho.scale(1.0 - fraction)?.compose(&rho2.id_plus().inverse());
    let lhs = rho.id_plus();
    let rhs = rho1.id_plus().compose(&rho2.id_plus());
    let residual = lhs.distance(&rhs);
    if residual > 1e-10 {
        return Err(KFunError::FactorResidual { residual });
    }
    Ok((rho1, rho2))
}

/// Samples `(r_k, z_k)` with `r` strictly increasing and positive and `z` non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneSamples {
    rs: Vec<f64>,
    zs: Vec<f64>,
}

impl MonotoneSamples {
    pub fn new(rs: Vec<f64>, zs: Vec<f64>) -> Result<Self, KFunError> {
        if rs.len() != zs.len() || rs.is_empty() {
            return Err(KFunError::BadSamples("need equally many r and z values".into()));
        }
        for i in 0..rs.len() {
            if !(rs[i].is_finite() && zs[i].is_finite() && zs[i] >= 0.0 && rs[i] > 0.0) {
                return Err(KFunError::BadSamples(format!("bad sample at index {i}")));
            }
            if i > 0 && !(rs[i] > rs[i - 1] && zs[i] >= zs[i - 1]) {
                return Err(KFunError::BadSamples(format!("not monotone at index {i}")));
            }
        }
        Ok(Self { rs, zs })
    }

    /// Largest non-decreasing sequence below the data (suffix minimum).
    pub fn lower_hull(rs: Vec<f64>, mut zs: Vec<f64>) -> Result<Self, KFunError> {
        for i in (0..zs.len().saturating_sub(1)).rev() {
            zs[i] = zs[i].min(zs[i + 1]);
        }
        Self::new(rs, zs)
    }

    /// Smallest non-decreasing sequence above the data (prefix maximum).
    pub fn upper_hull(rs: Vec<f64>, mut zs: Vec<f64>) -> Result<Self, KFunError> {
        for i in 1..zs.len() {
            zs[i] = zs[i].max(zs[i - 1]);
        }
        Self::new(rs, zs)
    }

    pub fn rs(&self) -> &[f64] {
        &self.rs
    }

    pub fn zs(&self) -> &[f64] {
        &self.zs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Below,
    Above,
}

/// Fits a K∞ function lying below (or above) every sample.
pub fn envelope(samples: &MonotoneSamples, side: Side) -> Result<KFun, KFunError> {
    let (rs, zs) = (&samples.rs, &samples.zs);
    let eps = ENVELOPE_SLOPE_FLOOR;
    let n = rs.len();
    let mut v = vec![0.0; n];
    match side {
        Side::Above => {
            let (mut pr, mut pv) = (0.0, 0.0);
            for k in 0..n {
                v[k] = zs[k].max(pv + eps * (rs[k] - pr)).max(pv * (1.0 + 1e-12));
                (pr, pv) = (rs[k], v[k]);
            }
        }
        Side::Below => {
            if let Some(i) = zs.iter().position(|&z| z <= 0.0) {
                return Err(KFunError::ZeroSample(rs[i]));
            }
            v[n - 1] = zs[n - 1];
            for k in (0..n - 1).rev() {
                let cand = (v[k + 1] - eps * (rs[k + 1] - rs[k])).min(v[k + 1] * (1.0 - 1e-12));
                let cand = if cand > 0.0 { cand } else { v[k + 1] * rs[k] / rs[k + 1] };
                v[k] = zs[k].min(cand);
            }
        }
    }
    let (pr, pv) = if n >= 2 { (rs[n - 2], v[n - 2]) } else { (0.0, 0.0) };
    let tail = ((v[n - 1] - pv) / (rs[n - 1] - pr)).max(eps);
    let f = KFun::new(std::iter::once((0.0, 0.0)).chain(rs.iter().copied().zip(v)).collect(), tail)?;
    Ok(f.simplify())
}

/// Named gain families accepted in network files and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GainDescriptor {
    Linear { k: f64 },
    Power { c: f64, p: f64 },
    Pl { points: Vec<[f64; 2]>, final_slope: f64 },
}

/// A descriptor turned into a [`KFun`], with the largest relative error
/// observed at segment midpoints (zero for exact families).
#[derive(Debug, Clone)]
pub struct Discretized {
    pub function: KFun,
    pub max_rel_error: f64,
}

impl GainDescriptor {
    /// Converts to a PL function; nonlinear families use `points` log-spaced
    /// breakpoints on `[lo, hi]`.
    pub fn discretize(&self, range: (f64, f64), points: usize) -> Result<Discretized, KFunError> {
        match *self {
            GainDescriptor::Linear { k } => Ok(Discretized { function: KFun::linear(k)?, max_rel_error: 0.0 }),
            GainDescriptor::Pl { ref points, final_slope } => Ok(Discretized {
                function: KFun::new(points.iter().map(|p| (p[0], p[1])).collect(), final_slope)?,
                max_rel_error: 0.0,
            }),
            GainDescriptor::Power { c, p } => {
                if !(c > 0.0 && p > 0.0 && c.is_finite() && p.is_finite()) {
                    return Err(KFunError::BadDescriptor(format!("power needs c, p > 0, got c={c}, p={p}")));
                }
                let (lo, hi) = range;
                if !(lo > 0.0 && hi > lo && points >= 2) {
                    return Err(KFunError::BadDescriptor(format!("bad discretization range [{lo}, {hi}]")));
                }
                let g = |r: f64| c * r.powf(p);
                let step = (hi / lo).ln() / (points - 1) as f64;
                let xs: Vec<f64> = (0..points).map(|k| lo * (step * k as f64).exp()).collect();
                let f = KFun::new(
                    std::iter::once((0.0, 0.0)).chain(xs.iter().map(|&x| (x, g(x)))).collect(),
                    c * p * hi.powf(p - 1.0),
                )?;
                let err = xs
                    .windows(2)
                    .map(|w| {
                        let m = (w[0] * w[1]).sqrt();
                        (f.eval(m) - g(m)).abs() / g(m)
                    })
                    .fold(0.0, f64::max);
                Ok(Discretized { function: f, max_rel_error: err })
            }
        }
    }
}

impl FromStr for GainDescriptor {
    type Err = KFunError;

    /// Accepts `linear:k`, `power:c:p`, or a JSON descriptor.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| KFunError::BadDescriptor(e.to_string()));
        }
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| KFunError::BadDescriptor(format!("bad number '{t}'")));
        match parts.as_slice() {
            ["linear", k] => Ok(GainDescriptor::Linear { k: num(k)? }),
            ["power", c, p] => Ok(GainDescriptor::Power { c: num(c)?, p: num(p)? }),
            _ => Err(KFunError::BadDescriptor(format!("unrecognized descriptor '{s}'"))),
        }
    }
}
