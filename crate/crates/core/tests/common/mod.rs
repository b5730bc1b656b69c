#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sglab_core::{GainNetwork, KFun, Maf};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// PL K∞ function with up to `max_breaks` breakpoints and every slope in `slopes`.
pub fn random_kfun<R: Rng>(rng: &mut R, max_breaks: usize, slopes: (f64, f64)) -> KFun {
    let mut pts = vec![(0.0, 0.0)];
    let (mut x, mut y) = (0.0, 0.0);
    for _ in 0..rng.random_range(0..=max_breaks) {
        let dx = 10f64.powf(rng.random_range(-1.5..1.0));
        x += dx;
        y += dx * rng.random_range(slopes.0..=slopes.1);
        pts.push((x, y));
    }
    KFun::new(pts, rng.random_range(slopes.0..=slopes.1)).unwrap()
}

/// Random edge set on `n` nodes; each ordered pair `j → i`, `j ≠ i`, is present
/// with probability `p`.
pub fn random_edges<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if i != j && rng.random_bool(p) {
                edges.push((j, i));
            }
        }
    }
    edges
}

/// Network with PL gains; the slopes of gains into node `i` are scaled by
/// `slopes` divided by the in-degree when `maf` is `Sum`.
pub fn random_network<R: Rng>(rng: &mut R, n: usize, maf: Maf, p: f64, slopes: (f64, f64), max_breaks: usize) -> GainNetwork {
    let edges = random_edges(rng, n, p);
    let mut indeg = vec![0usize; n];
    for &(_, i) in &edges {
        indeg[i] += 1;
    }
    let gains = edges
        .into_iter()
        .map(|(j, i)| {
            let div = if matches!(maf, Maf::Sum) { indeg[i] as f64 } else { 1.0 };
            let g = random_kfun(rng, max_breaks, (slopes.0 / div, slopes.1 / div));
            (j, i, g)
        })
        .collect();
    GainNetwork::new(n, gains, vec![maf]).unwrap()
}

pub fn random_maf<R: Rng>(rng: &mut R) -> Maf {
    if rng.random_bool(0.5) { Maf::Max } else { Maf::Sum }
}

/// Linear sum-type network from `a` (`a[i][j]` is the gain `j → i`); the diagonal is ignored.
pub fn linear_network(a: &[Vec<f64>]) -> GainNetwork {
    let n = a.len();
    let mut edges = Vec::new();
    for (i, row) in a.iter().enumerate() {
        for (j, &k) in row.iter().enumerate() {
            if k > 0.0 && i != j {
                edges.push((j, i, KFun::linear(k).unwrap()));
            }
        }
    }
    GainNetwork::new(n, edges, vec![Maf::Sum]).unwrap()
}

/// Growth ratio of sup-norm power iteration, `(‖A^{m+2}𝟙‖ / ‖A^m𝟙‖)^{1/2}`.
/// Two steps so period-two matrices settle too.
pub fn power_ratio(a: &[Vec<f64>], m: usize) -> f64 {
    let n = a.len();
    let step = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| a[i][j] * v[j]).sum()).collect() };
    let sup = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mut v = vec![1.0; n];
    for _ in 0..m {
        let w = step(&v);
        let norm = sup(&w);
        if norm == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|x| x / norm).collect();
    }
    (sup(&step(&step(&v))) / sup(&v)).sqrt()
}

/// Positive off-diagonal entries, zero diagonal.
pub fn random_matrix<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { rng.random_range(0.05..1.0) }).collect()).collect()
}

pub fn scaled(a: &[Vec<f64>], c: f64) -> Vec<Vec<f64>> {
    a.iter().map(|row| row.iter().map(|x| x * c).collect()).collect()
}

/// Random cone vector with entries log-uniform in `[lo, hi]`, some set to zero.
pub fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64, zero_prob: f64) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random_bool(zero_prob) { 0.0 } else { lo * (hi / lo).powf(rng.random::<f64>()) })
        .collect()
}
