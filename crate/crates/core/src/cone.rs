//! The positive cone of `ℓ∞` over a finite index set, with its partial order.

use std::ops::Index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinfty::KFun;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("entry {index} is negative or not finite: {value}")]
    BadEntry { index: usize, value: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
}

/// Dense nonnegative vector with the sup-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConeVec(Vec<f64>);

impl TryFrom<Vec<f64>> for ConeVec {
    type Error = ConeError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        ConeVec::new(v)
    }
}

impl From<ConeVec> for Vec<f64> {
    fn from(v: ConeVec) -> Self {
        v.0
    }
}

impl Index<usize> for ConeVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Relation between two vectors, most specific first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "relation", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Order {
    Equal,
    /// `s ≪ t`: every entry of `t − s` is at least `margin > 0`.
    MuchLess { margin: f64 },
    /// `s ≤ t`, `s ≠ t`.
    Less,
    MuchGreater { margin: f64 },
    Greater,
    Incomparable,
}

impl Order {
    pub fn is_leq(self) -> bool {
        matches!(self, Order::Equal | Order::Less | Order::MuchLess { .. })
    }

    pub fn is_geq(self) -> bool {
        matches!(self, Order::Equal | Order::Greater | Order::MuchGreater { .. })
    }
}

impl ConeVec {
    pub fn new(v: Vec<f64>) -> Result<Self, ConeError> {
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(ConeError::BadEntry { index, value });
        }
        Ok(ConeVec(v))
    }

    /// Wraps a vector already known to be nonnegative and finite.
    pub(crate) fn from_trusted(v: Vec<f64>) -> Self {
        debug_assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0), "{v:?}");
        ConeVec(v)
    }

    pub fn zeros(n: usize) -> Self {
        ConeVec(vec![0.0; n])
    }

    /// `r·𝟙`.
    pub fn ray(n: usize, r: f64) -> Result<Self, ConeError> {
        Self::new(vec![r; n])
    }

    pub fn ones(n: usize) -> Self {
        ConeVec(vec![1.0; n])
    }

    /// Unit vector `e^i`.
    pub fn unit(n: usize, i: usize) -> Result<Self, ConeError> {
        if i >= n {
            return Err(ConeError::IndexOutOfRange(i));
        }
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Ok(ConeVec(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Sup-norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    fn check_dim(&self, other: &ConeVec) -> Result<(), ConeError> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(ConeError::DimensionMismatch(self.len(), other.len()))
        }
    }

    /// Entrywise maximum `s ⊕ t`.
    pub fn oplus(&self, other: &ConeVec) -> Result<ConeVec, ConeError> {
        self.check_dim(other)?;
        Ok(ConeVec(self.0.iter().zip(&other.0).map(|(a, b)| a.max(*b)).collect()))
    }

    /// Signed difference `self − other`.
    pub fn sub(&self, other: &ConeVec) -> Result<Vec<f64>, ConeError> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// Sup-norm of `self − other`.
    pub fn dist(&self, other: &ConeVec) -> Result<f64, ConeError> {
        Ok(self.sub(other)?.iter().fold(0.0, |m, d| m.max(d.abs())))
    }

    pub fn scale(&self, c: f64) -> Result<ConeVec, ConeError> {
        ConeVec::new(self.0.iter().map(|x| c * x).collect())
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: &KFun) -> ConeVec {
        ConeVec(self.0.iter().map(|&x| f.eval(x)).collect())
    }

    /// Convex combination `(1 − α)·self + α·other`.
    pub fn lerp(&self, other: &ConeVec, alpha: f64) -> Result<ConeVec, ConeError> {
        self.check_dim(other)?;
        Ok(ConeVec(self.0.iter().zip(&other.0).map(|(a, b)| ((1.0 - alpha) * a + alpha * b).max(0.0)).collect()))
    }

    /// Entries at `idx`, re-indexed `0..idx.len()`.
    pub fn select(&self, idx: &[usize]) -> Result<ConeVec, ConeError> {
        idx.iter()
            .map(|&i| self.0.get(i).copied().ok_or(ConeError::IndexOutOfRange(i)))
            .collect::<Result<Vec<_>, _>>()
            .map(ConeVec)
    }

    /// Keeps entries at `idx` and zeroes the rest.
    pub fn mask(&self, idx: &[usize]) -> Result<ConeVec, ConeError> {
        let mut v = vec![0.0; self.len()];
        for &i in idx {
            *v.get_mut(i).ok_or(ConeError::IndexOutOfRange(i))? = self.0[i];
        }
        Ok(ConeVec(v))
    }

    /// Places `self` at positions `idx` of a zero vector of length `n`.
    pub fn embed(&self, idx: &[usize], n: usize) -> Result<ConeVec, ConeError> {
        if idx.len() != self.len() {
            return Err(ConeError::DimensionMismatch(idx.len(), self.len()));
        }
        let mut v = vec![0.0; n];
        for (k, &i) in idx.iter().enumerate() {
            *v.get_mut(i).ok_or(ConeError::IndexOutOfRange(i))? = self.0[k];
        }
        Ok(ConeVec(v))
    }
}

/// Compares `s` against `t` in the cone order.
pub fn order_compare(s: &ConeVec, t: &ConeVec) -> Result<Order, ConeError> {
    s.check_dim(t)?;
    if s == t {
        return Ok(Order::Equal);
    }
    let d = t.sub(s)?;
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(if lo > 0.0 {
        Order::MuchLess { margin: lo }
    } else if lo >= 0.0 {
        Order::Less
    } else if hi < 0.0 {
        Order::MuchGreater { margin: -hi }
    } else if hi <= 0.0 {
        Order::Greater
    } else {
        Order::Incomparable
    })
}

/// `s ≤ t + tol·max(1, ‖t‖)` entrywise.
pub fn leq_tol(s: &[f64], t: &[f64], tol: f64) -> bool {
    let scale = t.iter().copied().fold(1.0, f64::max);
    s.iter().zip(t).all(|(a, b)| *a <= b + tol * scale)
}

/// First vector violating `min_i s_i ≥ φ(‖s‖)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityViolation {
    pub index: usize,
    pub min_entry: f64,
    pub bound: f64,
}

/// Checks that every vector satisfies `min_i s_i ≥ φ(‖s‖)`.
pub fn coercivity_check(vectors: &[ConeVec], phi: &KFun) -> Result<(), CoercivityViolation> {
    for (index, s) in vectors.iter().enumerate() {
        let bound = phi.eval(s.norm());
        let min_entry = s.min_entry();
        if min_entry < bound * (1.0 - 1e-12) {
            return Err(CoercivityViolation { index, min_entry, bound });
        }
    }
    Ok(())
}
