//! Independent reference computations used to cross-check the fast paths:
//! brute-force support functions, grid-search projection, bisection for the
//! masking scale, finite-difference gradients, polygon areas for χ²
//! uniformity tests, and a suite runner behind the `oracle` subcommand.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::geom::{HPolytope, Hyperbox, Zonotope, CONTAINMENT_SLACK};
use crate::rl::{flatten, Mlp};
use crate::safety::SafetyVerifier;
use crate::Result;

/// `max d·x` over the zonotope by enumerating all `2^k` generator sign
/// patterns. Only for small `k`.
pub fn zonotope_support_by_vertices(z: &Zonotope, d: &DVector<f64>) -> f64 {
    let k = z.generators().ncols();
    assert!(k <= 20, "too many generators for vertex enumeration");
    let base = d.dot(z.center());
    let proj: Vec<f64> = (0..k).map(|j| d.dot(&z.generators().column(j))).collect();
    (0u32..1 << k)
        .map(|mask| {
            base + (0..k)
                .map(|j| if mask >> j & 1 == 1 { proj[j] } else { -proj[j] })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Containment verdict from per-row vertex-enumerated support values, with
/// the same slack as the library check.
pub fn containment_by_support(z: &Zonotope, p: &HPolytope) -> bool {
    (0..p.num_rows()).all(|i| {
        zonotope_support_by_vertices(z, &p.normals().row(i).transpose()) <= p.offsets()[i] - CONTAINMENT_SLACK
    })
}

/// Smallest distance from `a` to a grid point of 𝔸 (`n` points per axis,
/// 2-D) where φ holds, and the grid spacing (diagonal of one cell).
pub fn grid_projection(v: &SafetyVerifier, s: &DVector<f64>, a: &DVector<f64>, n: usize) -> (Option<f64>, f64) {
    let b = v.action_box();
    assert_eq!(b.dim(), 2, "grid projection oracle is two-dimensional");
    let step = |i: usize| b.widths()[i] / (n - 1) as f64;
    let mut best: Option<f64> = None;
    for i in 0..n {
        for j in 0..n {
            let x = DVector::from_vec(vec![
                b.lower()[0] + step(0) * i as f64,
                b.lower()[1] + step(1) * j as f64,
            ]);
            if v.phi(s, &x) {
                let d = (&x - a).norm();
                if best.is_none_or(|bd| d < bd) {
                    best = Some(d);
                }
            }
        }
    }
    (best, step(0).hypot(step(1)))
}

/// Largest `λ ∈ [0,1]` with every vertex of `center ± λ·r` inside `p`, by
/// bisection to `tol`.
pub fn bisection_box_scale(p: &HPolytope, center: &DVector<f64>, r: &DVector<f64>, tol: f64) -> f64 {
    let fits = |lambda: f64| {
        let b = Hyperbox::centered(center, &(r * lambda)).expect("valid box");
        b.vertices().iter().all(|v| p.contains_point(v, 0.0))
    };
    if fits(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Relative errors `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-12)`
/// of the parameter and input gradients of `Σ upstream ∘ net(x)`, using
/// central differences.
pub fn mlp_gradient_error(net: &Mlp, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> (f64, f64) {
    let (grads, dx) = net.gradients(x, upstream).expect("shapes match");
    let objective = |n: &Mlp, x: &DMatrix<f64>| n.forward(x).expect("shapes match").component_mul(upstream).sum();
    let h = 1e-6;
    let p0 = net.flat_params();
    let mut probe = net.clone();
    let mut numeric = Vec::with_capacity(p0.len());
    for k in 0..p0.len() {
        let mut p = p0.clone();
        p[k] = p0[k] + h;
        probe.set_flat_params(&p).expect("same size");
        let up = objective(&probe, x);
        p[k] = p0[k] - h;
        probe.set_flat_params(&p).expect("same size");
        let down = objective(&probe, x);
        numeric.push((up - down) / (2.0 * h));
    }
    let mut numeric_x = DMatrix::zeros(x.nrows(), x.ncols());
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp[k] += h;
        let up = objective(net, &xp);
        xp[k] -= 2.0 * h;
        let down = objective(net, &xp);
        numeric_x[k] = (up - down) / (2.0 * h);
    }
    let analytic = DVector::from_vec(flatten(&grads));
    let numeric = DVector::from_vec(numeric);
    (relative(&analytic, &numeric), relative(&DVector::from_column_slice(dx.as_slice()), &DVector::from_column_slice(numeric_x.as_slice())))
}

fn relative(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

/// Area of `{x ∈ rect : C·x ≤ q}` for a 2-D polytope, by clipping the
/// rectangle against each halfplane.
pub fn clipped_area(p: &HPolytope, rect: &Hyperbox) -> f64 {
    let (lo, hi) = (rect.lower(), rect.upper());
    let mut poly = vec![(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])];
    for i in 0..p.num_rows() {
        let (a, b, c) = (p.normals()[(i, 0)], p.normals()[(i, 1)], p.offsets()[i]);
        let inside = |pt: &(f64, f64)| a * pt.0 + b * pt.1 <= c;
        let mut out = Vec::new();
        for k in 0..poly.len() {
            let cur = poly[k];
            let nxt = poly[(k + 1) % poly.len()];
            let (ci, ni) = (inside(&cur), inside(&nxt));
            if ci {
                out.push(cur);
            }
            if ci != ni {
                let fc = a * cur.0 + b * cur.1 - c;
                let fn_ = a * nxt.0 + b * nxt.1 - c;
                let t = fc / (fc - fn_);
                out.push((cur.0 + t * (nxt.0 - cur.0), cur.1 + t * (nxt.1 - cur.1)));
            }
        }
        poly = out;
        if poly.is_empty() {
            return 0.0;
        }
    }
    let n = poly.len();
    0.5 * (0..n)
        .map(|k| {
            let (x0, y0) = poly[k];
            let (x1, y1) = poly[(k + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        .abs()
}

/// Pearson χ² statistic, degrees of freedom and p-value for observed
/// counts against expected probabilities. Bins with expected count below 5
/// are pooled.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> (f64, usize, f64) {
    let total: usize = counts.iter().sum();
    let n = total as f64;
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        if p * n < 5.0 {
            pool_o += c as f64;
            pool_e += p * n;
        } else {
            obs.push(c as f64);
            exp.push(p * n);
        }
    }
    if pool_e > 0.0 || pool_o > 0.0 {
        obs.push(pool_o);
        exp.push(pool_e.max(1e-300));
    }
    let stat: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = obs.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat);
    (stat, dof, p)
}

/// Histogram of 2-D samples over a `bins × bins` grid on `rect` and the
/// probability of each cell under the uniform law on `p ∩ rect`.
pub fn uniform_cells_2d(samples: &[DVector<f64>], p: &HPolytope, rect: &Hyperbox, bins: usize) -> (Vec<usize>, Vec<f64>) {
    let w = rect.widths();
    let mut counts = vec![0usize; bins * bins];
    let mut areas = vec![0.0; bins * bins];
    for i in 0..bins {
        for j in 0..bins {
            let lo = [rect.lower()[0] + w[0] * i as f64 / bins as f64, rect.lower()[1] + w[1] * j as f64 / bins as f64];
            let hi = [rect.lower()[0] + w[0] * (i + 1) as f64 / bins as f64, rect.lower()[1] + w[1] * (j + 1) as f64 / bins as f64];
            let cell = Hyperbox::from_slices(&lo, &hi).expect("ordered cell");
            areas[i * bins + j] = clipped_area(p, &cell);
        }
    }
    let total: f64 = areas.iter().sum();
    for s in samples {
        let i = (((s[0] - rect.lower()[0]) / w[0] * bins as f64) as usize).min(bins - 1);
        let j = (((s[1] - rect.lower()[1]) / w[1] * bins as f64) as usize).min(bins - 1);
        counts[i * bins + j] += 1;
    }
    (counts, areas.iter().map(|a| a / total).collect())
}

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random zonotope/polytope pairs: library containment against the
/// vertex-enumeration oracle.
pub fn suite_containment(seed: u64, pairs: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut contained = 0;
    for _ in 0..pairs {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=6);
        let m = rng.random_range(n + 1..=10);
        let center = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let gens = DMatrix::from_fn(n, k, |_, _| rng.random_range(-0.3..0.3));
        let z = Zonotope::new(center, gens)?;
        let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let q = DVector::from_fn(m, |_, _| rng.random_range(0.2..1.5));
        let p = HPolytope::new(c, q)?;
        let fast = crate::geom::zonotope_in_polytope(&z, &p)?;
        if fast != containment_by_support(&z, &p) {
            mismatches += 1;
        }
        contained += fast as usize;
    }
    Ok(OracleReport {
        name: "containment",
        passed: mismatches == 0,
        detail: format!("{pairs} pairs, {contained} contained, {mismatches} mismatches"),
    })
}

/// Finite-difference gradient checks on random networks of the given layer
/// sizes.
pub fn suite_gradients(seed: u64, configs: &[(Vec<usize>, crate::rl::Activation)], instances: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (sizes, act) in configs {
        for _ in 0..instances {
            let net = Mlp::new(sizes, *act, &mut rng)?;
            let batch = rng.random_range(1..=4);
            let x = DMatrix::from_fn(sizes[0], batch, |_, _| rng.random_range(-1.0..1.0));
            let up = DMatrix::from_fn(*sizes.last().unwrap(), batch, |_, _| rng.random_range(-1.0..1.0));
            let (ep, ex) = mlp_gradient_error(&net, &x, &up);
            worst = worst.max(ep).max(ex);
        }
    }
    Ok(OracleReport {
        name: "gradients",
        passed: worst < 1e-4,
        detail: format!("{} configurations x {instances} instances, worst relative error {worst:.2e}", configs.len()),
    })
}

/// Monte-Carlo simulation of the replacement shield on a random finite MDP
/// against the closed-form shielded transition tensor.
pub fn suite_finite_mdp(seed: u64, samples: usize) -> Result<OracleReport> {
    use crate::shields::{shielded_mdp_model, simulate_shielded, FiniteMDP};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na) = (3, 2);
    let mut t = Vec::new();
    for _ in 0..ns * na {
        let raw: Vec<f64> = (0..ns).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let rest: f64 = row[1..].iter().sum();
        row[0] = 1.0 - rest;
        t.extend(row);
    }
    let r: Vec<f64> = (0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect();
    // action 0 safe everywhere, action 1 unsafe in states 0 and 2
    let safe = vec![true, false, true, true, true, false];
    let replacement = vec![1.0, 0.0, 0.5, 0.5, 1.0, 0.0];
    let m = FiniteMDP::new(ns, na, t, r, safe, replacement)?;
    let (closed, _) = shielded_mdp_model(&m);
    let est = simulate_shielded(&m, samples, &mut rng)?;
    let max_dev = est.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let max_row = closed
        .chunks(ns)
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(OracleReport {
        name: "finite_mdp",
        passed: max_dev <= 0.01 && max_row <= 1e-12,
        detail: format!("max |MC - closed form| = {max_dev:.4}, max |row sum - 1| = {max_row:.1e}"),
    })
}

/// Uniform draw from the bounding box of the safe set, rejected until it
/// falls inside the set.
pub fn sample_safe_state<R: Rng + ?Sized>(v: &SafetyVerifier, rng: &mut R) -> Result<DVector<f64>> {
    let bb = v.safe_set().polytope.bounding_box()?;
    loop {
        let s = uniform_in(&bb, rng);
        if v.safe_set().contains(&s) {
            return Ok(s);
        }
    }
}

fn uniform_in<R: Rng + ?Sized>(b: &Hyperbox, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(b.dim(), |i, _| {
        let (lo, hi) = (b.lower()[i], b.upper()[i]);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    })
}

/// Projection shield on random states with unsafe proposals against the
/// `grid × grid` brute-force search. Needs a two-dimensional action space.
pub fn suite_projection(v: &SafetyVerifier, seed: u64, states: usize, grid: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst_gap: f64 = 0.0;
    let mut cell = 0.0;
    let mut done = 0;
    while done < states {
        let s = sample_safe_state(v, &mut rng)?;
        let Some(a) = (0..1000).map(|_| uniform_in(v.action_box(), &mut rng)).find(|a| !v.phi(&s, a)) else {
            continue;
        };
        done += 1;
        let d = crate::shields::shield_project(v, &s, &a)?;
        let (best, diag) = grid_projection(v, &s, &a, grid);
        cell = diag;
        let ok_phi = v.phi(&s, &d.executed) && d.fallback.is_none();
        let gap = match (best, d.projection_distance) {
            (Some(g), Some(q)) => (q - g).abs(),
            _ => f64::INFINITY,
        };
        worst_gap = worst_gap.max(gap);
        if !ok_phi || gap > diag {
            failures += 1;
        }
    }
    Ok(OracleReport {
        name: "projection",
        passed: failures == 0,
        detail: format!(
            "{states} states, {failures} failures, worst |QP - grid| = {worst_gap:.2e} (cell diagonal {cell:.2e})"
        ),
    })
}

/// Continuous masking on random `(s, a)`: the masked action passes φ, the
/// inverse map recovers the proposal and `λ` matches bisection.
pub fn suite_masking(v: &SafetyVerifier, seed: u64, pairs: usize) -> Result<OracleReport> {
    use crate::shields::{mask_continuous, masking_inverse, safe_action_box, PROJECTION_MARGIN};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = v.action_box().clone();
    let (mut phi_fail, mut fallbacks) = (0, 0);
    let (mut worst_inv, mut worst_lambda): (f64, f64) = (0.0, 0.0);
    for _ in 0..pairs {
        let s = sample_safe_state(v, &mut rng)?;
        let a = uniform_in(&outer, &mut rng);
        let d = mask_continuous(v, &s, &a)?;
        if !v.phi(&s, &d.executed) {
            phi_fail += 1;
        }
        let poly = v.safe_action_polytope(&s)?;
        let shrunk = HPolytope::new(poly.normals().clone(), poly.offsets().map(|q| q - PROJECTION_MARGIN))?;
        let center = outer.center();
        let reference = if shrunk.contains_point(&center, 0.0) {
            bisection_box_scale(&shrunk, &center, &outer.halfwidths(), 1e-13)
        } else {
            0.0
        };
        let lambda = d.mask_scale.unwrap_or(0.0);
        worst_lambda = worst_lambda.max((lambda - reference).abs());
        match safe_action_box(v, &s)? {
            Some((l, inner)) if l > 0.0 => {
                let back = masking_inverse(&d.executed, &outer, &inner)?;
                worst_inv = worst_inv.max((back - &a).amax());
            }
            _ => fallbacks += 1,
        }
    }
    Ok(OracleReport {
        name: "masking",
        passed: phi_fail == 0 && worst_inv <= 1e-9 && worst_lambda <= 1e-9,
        detail: format!(
            "{pairs} pairs, {phi_fail} unverified, {fallbacks} degenerate boxes, worst inverse error {worst_inv:.2e}, worst λ error {worst_lambda:.2e}"
        ),
    })
}

/// Finds a state whose safe action set covers between 30% and 80% of 𝔸
/// (estimated on a grid). Needs a two-dimensional action space.
pub fn partially_safe_state<R: Rng + ?Sized>(v: &SafetyVerifier, rng: &mut R) -> Result<DVector<f64>> {
    let b = v.action_box();
    for _ in 0..100_000 {
        let s = sample_safe_state(v, rng)?;
        let poly = v.safe_action_polytope(&s)?;
        let share = clipped_area(&poly, b) / b.volume();
        if (0.3..=0.8).contains(&share) {
            return Ok(s);
        }
    }
    Err(crate::Error::Input("no partially safe state found".into()))
}

/// Replacement by sampling at a fixed state: χ² test of the executed
/// actions against the uniform law on 𝔸_φ(s), at the 1% level.
pub fn suite_uniformity(v: &SafetyVerifier, seed: u64, proposals: usize, bins: usize) -> Result<OracleReport> {
    use crate::shields::{shield_replace, ReplaceStrategy};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = partially_safe_state(v, &mut rng)?;
    let b = v.action_box().clone();
    let mut executed = Vec::with_capacity(proposals);
    let mut fallbacks = 0;
    while executed.len() < proposals {
        let a = uniform_in(&b, &mut rng);
        if v.phi(&s, &a) {
            continue;
        }
        let d = shield_replace(v, &s, &a, ReplaceStrategy::Sample, &mut rng)?;
        if d.fallback.is_some() {
            fallbacks += 1;
        }
        executed.push(d.executed);
    }
    let poly = v.safe_action_polytope(&s)?;
    let (counts, probs) = uniform_cells_2d(&executed, &poly, &b, bins);
    let (stat, dof, p) = chi_square(&counts, &probs);
    Ok(OracleReport {
        name: "uniformity",
        passed: p > 0.01,
        detail: format!("{proposals} unsafe proposals, {fallbacks} fallbacks, χ² = {stat:.1} on {dof} dof, p = {p:.3}"),
    })
}
