//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use sglab_core::checks::{
    cycle_gain_check, delta_chain, max_mbi_probe, nji_probe, spectral_condition, uniform_nji_probe, Counterexample, Sampler,
    Status, UniformNjiParams, Witness,
};
use sglab_core::dynamics::{max_fixed_point, min_fixed_point, stability_battery, StopRule};
use sglab_core::kinfty::{factor_id_plus, sub_from_id};
use sglab_core::network::Direction;
use sglab_core::path::{combined_path, geometric_grid, minimal_path, validate};
use sglab_core::{ConeVec, GainNetwork, GainOperator, KFun, Maf, NetworkSpec};

use common::*;

type Outcome = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn sup_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("{what} took {t:.2?}, limit {limit:?}"))
}

/// A validated path: the operator, margin and knot grid it was validated on.
struct Validated {
    label: String,
    op: GainOperator,
    rho: KFun,
    grid: Vec<f64>,
}

fn kinfty_round_trips() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(1);
    let mut worst_sub: f64 = 0.0;
    let mut worst_factor: f64 = 0.0;
    for k in 0..1000 {
        let f = random_kfun(&mut rng, 8, (0.05, 5.0));
        let back = f.inverse().inverse();
        for (x, y) in f.points() {
            ensure(back.eval(x) == y, || format!("function {k}: inverse∘inverse({x}) = {} ≠ {y}", back.eval(x)))?;
        }
        let eta = sub_from_id(&f).map_err(|e| format!("function {k}: {e}"))?;
        let (r1, r2) = factor_id_plus(&f).map_err(|e| format!("function {k}: {e}"))?;
        let top = f.xs().last().copied().unwrap_or(1.0).max(1.0) * 2.0;
        for m in 0..50 {
            let x = top * m as f64 / 49.0;
            let y = x - eta.eval(x);
            worst_sub = worst_sub.max((y + f.eval(y) - x).abs() / x.max(1.0));
            let lhs = x + f.eval(x);
            let inner = x + r2.eval(x);
            worst_factor = worst_factor.max((inner + r1.eval(inner) - lhs).abs() / lhs.max(1.0));
        }
    }
    ensure(worst_sub < 1e-10, || format!("sub_from_id residual {worst_sub:e}"))?;
    ensure(worst_factor < 1e-10, || format!("factor_id_plus residual {worst_factor:e}"))?;
    within(start, Duration::from_secs(5), "1000 functions")?;
    Ok(format!("sub_from_id residual {worst_sub:.1e}, factor residual {worst_factor:.1e}, {:.2?}", start.elapsed()))
}

fn operator_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(2);
    let mut worst_conj: f64 = 0.0;
    for k in 0..100 {
        let n = rng.random_range(1..=6);
        let maf = random_maf(&mut rng);
        let net = random_network(&mut rng, n, maf, 0.5, (0.1, 3.0), 4);
        let op: GainOperator = net.into();
        for _ in 0..500 {
            let s = random_vec(&mut rng, n, 1e-3, 1e3, 0.2);
            let t: Vec<f64> = s.iter().map(|x| x + rng.random_range(0.0..2.0) * x.max(0.1)).collect();
            let (gs, gt) = (op.apply_raw(&s), op.apply_raw(&t));
            ensure(gs.iter().zip(&gt).all(|(a, b)| a <= b), || format!("network {k}: Γ not monotone at {s:?} ≤ {t:?}"))?;
        }
        let rho = random_kfun(&mut rng, 4, (0.05, 2.0));
        let (right, left) = (op.enlarge_right(&rho), op.enlarge_left(&rho));
        let hat = op.augmented();
        for _ in 0..20 {
            let s = ConeVec::new(random_vec(&mut rng, n, 1e-3, 1e3, 0.2)).unwrap();
            let lhs = right.apply(&s).unwrap().map(&rho.id_plus());
            let rhs = left.apply(&s.map(&rho.id_plus())).unwrap();
            worst_conj = worst_conj.max(sup_rel(lhs.as_slice(), rhs.as_slice()));
            let proj = op.projected(&s).unwrap();
            for m in 0..=20 {
                let a = hat.apply_n(&s, m).unwrap();
                let b = proj.apply_n(&s, m).unwrap();
                ensure(a == b, || format!("network {k}: Γ̂^{m}(s) ≠ Γ_s^{m}(s) at {s:?}"))?;
            }
        }
    }
    ensure(worst_conj < 1e-10, || format!("conjugacy residual {worst_conj:e}"))?;
    within(start, Duration::from_secs(30), "100 networks")?;
    Ok(format!("conjugacy residual {worst_conj:.1e}, {:.2?}", start.elapsed()))
}

fn max_type_closed_form() -> Outcome {
    let mut rng = rng(3);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let n = rng.random_range(1..=6);
        let net = random_network(&mut rng, n, Maf::Max, 0.5, (0.1, 3.0), 4);
        let op: GainOperator = net.into();
        let rho = random_kfun(&mut rng, 3, (0.01, 0.5));
        let g = op.enlarge_left(&rho);
        let s = ConeVec::new(random_vec(&mut rng, n, 1e-2, 1e2, 0.2)).unwrap();
        let b = ConeVec::new(random_vec(&mut rng, n, 1e-2, 1e2, 0.2)).unwrap();
        let gb = g.projected(&b).unwrap();
        let m = rng.random_range(0..=20);
        let lhs = gb.apply_n(&s, m).unwrap();
        let mut rhs = g.apply_n(&s, m).unwrap();
        for j in 0..m {
            rhs = rhs.oplus(&g.apply_n(&b, j).unwrap()).unwrap();
        }
        let err = sup_rel(lhs.as_slice(), rhs.as_slice());
        ensure(err <= 1e-12, || format!("network {k}, n = {m}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("max relative error {worst:.1e} over 50 networks"))
}

fn spectral_condition_on_matrices(paths: &mut Vec<Validated>) -> Outcome {
    let mut rng = rng(4);
    let rho = KFun::linear(0.01).unwrap();
    let grid = geometric_grid(-10, 10);
    let rule = StopRule::default();
    let mut worst_growth: f64 = 0.0;
    let mut worst_n = 0;
    for k in 0..20 {
        let dim = rng.random_range(2..=6);
        let a = random_matrix(&mut rng, dim);
        let lambda = power_ratio(&a, 500);
        let good: GainOperator = linear_network(&scaled(&a, 0.9 / lambda)).into();
        let v = spectral_condition(&good, 64, 0).map_err(|e| e.to_string())?;
        match v.witness {
            Some(Witness::Spectral { n, .. }) if v.status == Status::Pass => worst_n = worst_n.max(n),
            _ => return Err(format!("matrix {k} at ratio 0.9: {v:?}")),
        }
        let bad: GainOperator = linear_network(&scaled(&a, 1.1 / lambda)).into();
        let v = spectral_condition(&bad, 64, 0).map_err(|e| e.to_string())?;
        let growth = match &v.counterexample {
            Some(Counterexample::SpectralGrowth { growth_ratio, .. }) if v.is_fail() && v.inconclusive => *growth_ratio,
            _ => return Err(format!("matrix {k} at ratio 1.1: {:?}", v.status)),
        };
        ensure((growth - 1.1).abs() <= 0.05, || format!("matrix {k}: growth ratio {growth}"))?;
        worst_growth = worst_growth.max((growth - 1.1).abs());

        let p = minimal_path(&good, Some(&rho), &grid, &rule).map_err(|e| format!("matrix {k}: {e}"))?;
        let unit = p.eval(1.0);
        for (&r, s) in p.r_grid.iter().zip(&p.points) {
            let scaled: Vec<f64> = unit.as_slice().iter().map(|x| r * x).collect();
            let err = sup_rel(s.as_slice(), &scaled);
            ensure(err <= 1e-9, || format!("matrix {k}: σ({r}) ≠ r·σ(1), error {err:e}"))?;
        }
        let rep = validate(&p, &good).map_err(|e| e.to_string())?;
        if rep.strict {
            paths.push(Validated { label: format!("matrix {k}"), op: good, rho: rho.clone(), grid: grid.clone() });
        }
    }
    Ok(format!("passes by n = {worst_n}, growth ratio within {worst_growth:.3} of 1.1, 20 matrices"))
}

fn finite_case_chain(paths: &mut Vec<Validated>) -> Outcome {
    let mut rng = rng(5);
    let rho = KFun::linear(0.1).unwrap();
    let grid = geometric_grid(-8, 8);
    let rule = StopRule::default();
    let mut qualified = 0;
    for k in 0..50 {
        let n = rng.random_range(1..=5);
        let (net, kind) = if rng.random_bool(0.6) {
            (random_network(&mut rng, n, Maf::Max, 0.5, (0.2, 1.3), 4), "max")
        } else {
            let a: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n).map(|_| if rng.random_bool(0.6) { rng.random_range(0.0..1.0) } else { 0.0 }).collect()).collect();
            let c = rng.random_range(0.5..1.2) / power_ratio(&a, 200).max(1e-3);
            (linear_network(&scaled(&a, c)), "linear")
        };
        let op: GainOperator = net.clone().into();
        let g = op.enlarge_left(&rho);
        let passes = if net.is_max_type() {
            cycle_gain_check(&net, Some(&rho), &grid, 100_000).map_err(|e| e.to_string())?.status == Status::Pass
        } else {
            spectral_condition(&g, 64, 0).map_err(|e| e.to_string())?.status == Status::Pass
        };
        if !passes {
            continue;
        }
        qualified += 1;
        let label = format!("network {k} ({kind}, {n} nodes)");
        let p = minimal_path(&op, Some(&rho), &grid, &rule).map_err(|e| format!("{label}: minimal_path failed: {e}"))?;
        let rep = validate(&p, &op).map_err(|e| e.to_string())?;
        ensure(rep.strict, || format!("{label}: path not valid: {rep:?}"))?;
        let stab = stability_battery(&g, &grid, 100, &rule).map_err(|e| e.to_string())?;
        ensure(stab.ugas_evidence, || format!("{label}: no UGAS evidence"))?;
        let mbi = max_mbi_probe(&g, &grid, &rule).map_err(|e| e.to_string())?;
        ensure(mbi.is_passing(), || format!("{label}: ⊕-MBI {:?}", mbi.status))?;
        paths.push(Validated { label, op, rho: rho.clone(), grid: grid.clone() });
    }
    ensure(qualified >= 10, || format!("only {qualified} of 50 networks satisfied a sufficient condition"))?;
    Ok(format!("{qualified} of 50 networks qualified, zero contradictions"))
}

fn necessary_conditions(paths: &[Validated]) -> Outcome {
    let rule = StopRule::default();
    for v in paths {
        let g = v.op.enlarge_left(&v.rho);
        let stab = stability_battery(&g, &v.grid, 100, &rule).map_err(|e| e.to_string())?;
        ensure(stab.ugas_evidence, || format!("{}: no UGAS evidence for Γ_ρ", v.label))?;
        let mbi = max_mbi_probe(&g, &v.grid, &rule).map_err(|e| e.to_string())?;
        ensure(mbi.is_passing(), || format!("{}: ⊕-MBI {:?}", v.label, mbi.status))?;
    }
    ensure(!paths.is_empty(), || "no validated paths to check".into())?;
    Ok(format!("{} validated paths, zero violations", paths.len()))
}

fn leq(a: &ConeVec, b: &ConeVec, tol: f64) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| *x <= y + tol * y.abs().max(1.0))
}

fn fixed_point_structure() -> Outcome {
    let mut rng = rng(7);
    let rule = StopRule::with_tol(1e-13);
    let tol = 1e-8;
    let mut unique_checked = 0;
    for k in 0..200 {
        let n = rng.random_range(1..=5);
        let (net, unique) = match k % 3 {
            0 => (random_network(&mut rng, n, Maf::Max, 0.5, (0.1, 0.9), 4), true),
            1 => {
                let a = random_matrix(&mut rng, n);
                let c = rng.random_range(0.3..0.9) / power_ratio(&a, 200);
                (linear_network(&scaled(&a, c)), true)
            }
            _ => (random_network(&mut rng, n, Maf::Sum, 0.6, (0.1, 0.9), 4), false),
        };
        let op: GainOperator = net.into();
        let b1 = ConeVec::new(random_vec(&mut rng, n, 1e-2, 1e2, 0.2)).unwrap();
        let b2 = ConeVec::new(b1.as_slice().iter().map(|x| x + rng.random_range(0.0..5.0)).collect()).unwrap();
        let lo1 = min_fixed_point(&op, &b1, &rule).map_err(|e| format!("instance {k}: {e}"))?;
        let lo2 = min_fixed_point(&op, &b2, &rule).map_err(|e| format!("instance {k}: {e}"))?;
        let hi1 = max_fixed_point(&op, &b1, None, &rule).map_err(|e| format!("instance {k}: {e}"))?;
        let hi2 = max_fixed_point(&op, &b2, None, &rule).map_err(|e| format!("instance {k}: {e}"))?;
        ensure(lo1.converged() && lo2.converged(), || format!("instance {k}: s_* did not converge"))?;
        ensure(leq(&lo1.point, &hi1.point, tol), || format!("instance {k}: s_*(b¹) ≰ s^*(b¹)"))?;
        ensure(leq(&lo2.point, &hi2.point, tol), || format!("instance {k}: s_*(b²) ≰ s^*(b²)"))?;
        ensure(leq(&lo1.point, &lo2.point, tol), || format!("instance {k}: s_* not monotone in b"))?;
        ensure(leq(&hi1.point, &hi2.point, tol), || format!("instance {k}: s^* not monotone in b"))?;
        if unique {
            unique_checked += 1;
            for (lo, hi) in [(&lo1.point, &hi1.point), (&lo2.point, &hi2.point)] {
                let err = sup_rel(lo.as_slice(), hi.as_slice());
                ensure(err <= tol, || format!("instance {k}: s_* ≠ s^*, relative gap {err:e}"))?;
            }
        }
    }
    Ok(format!("200 instances, {unique_checked} uniqueness checks"))
}

/// Pushes `s` down onto `s_j ≤ Γ_j(s) + δ` for `j` in `ball`, zeroing nodes outside `reach`.
fn adversary(op: &GainOperator, mut s: Vec<f64>, ball: &[usize], reach: &[usize], delta: f64) -> Vec<f64> {
    for (j, x) in s.iter_mut().enumerate() {
        if !reach.contains(&j) {
            *x = 0.0;
        }
    }
    for _ in 0..200 {
        let image = op.apply_raw(&s);
        let mut moved = false;
        for &j in ball {
            let cap = image[j] + delta;
            if s[j] > cap {
                s[j] = cap;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    s
}

fn delta_chain_soundness() -> Outcome {
    let mut rng = rng(8);
    let mut tested = 0usize;
    let mut tightest = f64::INFINITY;
    for k in 0..100 {
        let dim = rng.random_range(1..=4);
        let maf = random_maf(&mut rng);
        let net = random_network(&mut rng, dim, maf, 0.6, (0.2, 2.0), 3);
        let omega = net.operator_modulus();
        let op: GainOperator = net.clone().into();
        for _ in 0..20 {
            let n = rng.random_range(1..=4);
            let r = 10f64.powf(rng.random_range(-1.0..2.0));
            let eps = r * 10f64.powf(rng.random_range(-3.0..0.0));
            let delta = delta_chain(&omega, n, eps).map_err(|e| e.to_string())?.delta;
            for i in 0..dim {
                let ball = net.graph().neighborhood(i, n - 1, Direction::In);
                let reach = net.graph().neighborhood(i, n, Direction::In);
                for trial in 0..10 {
                    let s0: Vec<f64> = (0..dim).map(|_| if trial == 0 { r } else { rng.random_range(0.0..=r) }).collect();
                    let s = if trial % 2 == 0 { adversary(&op, s0, &ball, &reach, delta) } else { s0 };
                    let image = op.apply_raw(&s);
                    if ball.iter().any(|&j| image[j] < s[j] - delta) {
                        continue;
                    }
                    let mut t = s.clone();
                    for _ in 0..n {
                        t = op.apply_raw(&t);
                    }
                    let slack = t[i] - (s[i] - eps);
                    tested += 1;
                    tightest = tightest.min(slack / eps);
                    ensure(slack >= -1e-12 * r.max(1.0), || {
                        format!("network {k}: Γ^{n}_{i}(s) = {} < s_i − ε = {} at s = {s:?} (δ = {delta})", t[i], s[i] - eps)
                    })?;
                }
            }
        }
    }
    Ok(format!("{tested} samples satisfied the hypothesis, none violated the conclusion (tightest slack {tightest:.2e}·ε)"))
}

fn nji_equivalence() -> Outcome {
    let mut rng = rng(9);
    let range = (2f64.powi(-8), 2f64.powi(8));
    let sampler = Sampler::new(0, 10_000, range);
    let params = UniformNjiParams::dyadic(range.1, range.0, 3);
    let (mut holds, mut fails) = (0, 0);
    for k in 0..50 {
        let maf = random_maf(&mut rng);
        let net = random_network(&mut rng, 4, maf, 0.5, (0.2, 2.0), 3);
        let op: GainOperator = net.into();
        let a = nji_probe(&op, &sampler).map_err(|e| e.to_string())?;
        let b = uniform_nji_probe(&op, &params, &sampler).map_err(|e| e.to_string())?;
        ensure(!a.inconclusive && !b.inconclusive, || format!("network {k}: inconclusive verdict"))?;
        ensure(a.is_fail() == b.is_fail(), || format!("network {k}: NJI {:?} but uniform NJI {:?}", a.status, b.status))?;
        if a.is_fail() { fails += 1 } else { holds += 1 }
    }
    Ok(format!("50 networks agree ({holds} hold, {fails} fail)"))
}

fn chain(n: usize) -> GainNetwork {
    let spec: NetworkSpec = serde_json::from_str(
        r#"{"nodes":10,"maf":"sum","template":{"kind":"offsets","offsets":[-1,1],"gain":{"type":"linear","k":0.25}}}"#,
    )
    .unwrap();
    spec.build(Some(n)).unwrap()
}

fn truncation_scaling() -> Outcome {
    let rule = StopRule::default();
    let rho = KFun::linear(0.1).unwrap();
    let knots = geometric_grid(-20, 20);
    let mut notes = Vec::new();
    for n in [10, 100, 1000] {
        let start = Instant::now();
        let op: GainOperator = chain(n).into();
        let stab = stability_battery(&op, &[1.0], 40, &rule).map_err(|e| e.to_string())?;
        for (m, &beta) in stab.kl_table[0].iter().enumerate() {
            let bound = 0.5f64.powi(m as i32) + 1e-12;
            ensure(beta <= bound, || format!("N = {n}: β(1, {m}) = {beta:e} > {bound:e}"))?;
        }
        let p = combined_path(&op, Some(&rho), &knots, 16, &rule).map_err(|e| format!("N = {n}: {e}"))?;
        let rep = validate(&p, &op).map_err(|e| e.to_string())?;
        ensure(rep.c0, || format!("N = {n}: combined path invalid"))?;
        if n == 1000 {
            within(start, Duration::from_secs(60), "N = 1000")?;
        }
        notes.push(format!("N={n} {:.2?}", start.elapsed()));
    }
    Ok(format!("β bound and combined path hold; {}", notes.join(", ")))
}

fn main() {
    let mut paths = Vec::new();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("K∞ algebra round-trips", kinfty_round_trips()),
        ("operator identities", operator_identities()),
        ("max-type closed form", max_type_closed_form()),
        ("homogeneous spectral condition", spectral_condition_on_matrices(&mut paths)),
    ];
    results.push(("finite-case implication chain", finite_case_chain(&mut paths)));
    results.push(("necessary conditions", necessary_conditions(&paths)));
    results.push(("fixed-point structure", fixed_point_structure()));
    results.push(("δ-chain soundness", delta_chain_soundness()));
    results.push(("NJI and uniform NJI agree", nji_equivalence()));
    results.push(("truncation scaling", truncation_scaling()));

    let mut failed = 0;
    for (k, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg}", k + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {msg}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
