//! Independent reference solvers used by the test suites and `selftest`.
//!
//! Nothing here calls into the clustering or fusion implementations: the
//! exemplar oracle enumerates every exemplar subset, and the correlation
//! oracle maximizes the cosine objective by projected gradient ascent on
//! hand-rolled orthonormal bases.

use rand::Rng;

/// Net similarity of an exemplar set: each exemplar pays `preference`, every
/// other point takes its best similarity to an exemplar.
pub fn exemplar_objective(sim: &[Vec<f64>], preference: f64, exemplars: &[usize]) -> f64 {
    let mut total = preference * exemplars.len() as f64;
    for (i, row) in sim.iter().enumerate() {
        if exemplars.contains(&i) {
            continue;
        }
        total += exemplars
            .iter()
            .map(|&k| row[k])
            .fold(f64::NEG_INFINITY, f64::max);
    }
    total
}

/// Exhaustive search over all non-empty exemplar subsets. Returns the optimal
/// net similarity and every subset within `tol` of it.
pub fn best_exemplar_sets(sim: &[Vec<f64>], preference: f64, tol: f64) -> (f64, Vec<Vec<usize>>) {
    let n = sim.len();
    assert!((1..=16).contains(&n), "brute force limited to 1..=16 points");
    let scored: Vec<(f64, Vec<usize>)> = (1u32..(1 << n))
        .map(|mask| {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            (exemplar_objective(sim, preference, &set), set)
        })
        .collect();
    let best = scored.iter().map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    let optima = scored
        .into_iter()
        .filter(|(v, _)| *v >= best - tol)
        .map(|(_, s)| s)
        .collect();
    (best, optima)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Modified Gram-Schmidt with re-orthogonalization; drops columns whose
/// residual falls below `rank_tol` times their original norm.
pub fn orthonormal_basis(columns: &[Vec<f64>], rank_tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in columns {
        let original = dot(col, col).sqrt();
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let p = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if original > 0.0 && norm > rank_tol * original {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Maximizes `uᵀv / (‖u‖‖v‖)` over `u ∈ span(X)`, `v ∈ span(Y)` (columns given
/// as vectors of length d) by projected gradient ascent with random restarts.
///
/// With orthonormal bases `Qx`, `Qy`, `u = Qx α`, `v = Qy β` and the objective
/// becomes `αᵀMβ` on the unit spheres, `M = QxᵀQy`. Each step moves along the
/// gradient and projects back onto the spheres.
pub fn max_cosine_correlation<R: Rng>(x: &[Vec<f64>], y: &[Vec<f64>], rng: &mut R) -> f64 {
    let qx = orthonormal_basis(x, 1e-10);
    let qy = orthonormal_basis(y, 1e-10);
    if qx.is_empty() || qy.is_empty() {
        return 0.0;
    }
    let m: Vec<Vec<f64>> = qx
        .iter()
        .map(|qi| qy.iter().map(|qj| dot(qi, qj)).collect())
        .collect();
    let (p, q) = (qx.len(), qy.len());
    let step = 0.5;
    let mut best = 0.0f64;
    for _ in 0..8 {
        let mut alpha: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut beta: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut alpha);
        normalize(&mut beta);
        let mut value = f64::NEG_INFINITY;
        for _ in 0..20_000 {
            // ∇α = Mβ, ∇β = Mᵀα on the sphere.
            let grad_a: Vec<f64> = (0..p).map(|i| dot(&m[i], &beta)).collect();
            let grad_b: Vec<f64> = (0..q).map(|j| (0..p).map(|i| m[i][j] * alpha[i]).sum()).collect();
            alpha.iter_mut().zip(&grad_a).for_each(|(a, g)| *a += step * g);
            beta.iter_mut().zip(&grad_b).for_each(|(b, g)| *b += step * g);
            if normalize(&mut alpha) == 0.0 || normalize(&mut beta) == 0.0 {
                break;
            }
            let next: f64 = (0..p).map(|i| alpha[i] * dot(&m[i], &beta)).sum();
            if (next - value).abs() < 1e-15 {
                value = next;
                break;
            }
            value = next;
        }
        best = best.max(value.abs());
    }
    best.min(1.0)
}
