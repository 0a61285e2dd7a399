//! Seeded oracle suites shared by the `selftest` subcommand and the test suite.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::clustering::{affinity_propagation, build_similarity, ApParams, Metric};
use crate::clustering::embedding_matrix;
use crate::fusion::{cluster_correlation, decide, relevance_score, CcaOptions, RelevanceParams};
use crate::oracle;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: Vec<String>,
    /// Largest deviation from the oracle seen over all cases.
    pub worst_error: f64,
    #[serde(serialize_with = "as_secs")]
    pub elapsed: Duration,
}

fn as_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// 1 to 3 Gaussian blobs (sd 1, centers in [-20, 20]²), 1 to 8 points total.
pub fn ap_instance(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=8);
    let blobs = rng.random_range(1..=3usize);
    let centers: Vec<(f64, f64)> = (0..blobs)
        .map(|_| (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
        .collect();
    let unit = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let (cx, cy) = centers[i % blobs];
            vec![cx + unit.sample(rng), cy + unit.sample(rng)]
        })
        .collect()
}

/// Affinity propagation against exhaustive exemplar search.
pub fn ap_oracle_suite(instances: usize, seed: u64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for case in 0..instances {
        let points = ap_instance(&mut rng);
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let graph = build_similarity(&refs, Metric::NegSqEuclidean, -60.0).unwrap();
        let result = affinity_propagation(&graph.with_tie_noise(case as u64), &ApParams::default());
        let rows = graph.rows();
        let (best, _) = oracle::best_exemplar_sets(&rows, graph.preference(), 0.0);
        let got = oracle::exemplar_objective(&rows, graph.preference(), &result.exemplars);
        let gap = best - got;
        worst = worst.max(gap);
        if !result.converged || gap > 1e-9 * (1.0 + best.abs()) {
            failures.push(format!(
                "instance {case} (n = {}): objective {got:.6} vs optimum {best:.6}, converged = {}",
                points.len(),
                result.converged
            ));
        }
    }
    SuiteOutcome {
        name: "affinity propagation vs exhaustive exemplar search".into(),
        cases: instances,
        failures,
        worst_error: worst,
        elapsed: start.elapsed(),
    }
}

/// Random cluster pair: `d ≤ 10`, `m, n ≤ 6`. Some columns of `y` mix columns
/// of `x` so that correlations cover the whole range.
pub fn cca_pair(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = rng.random_range(2..=10);
    let m = rng.random_range(1..=6);
    let n = rng.random_range(1..=6);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let random = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| unit.sample(rng)).collect() };
    let x: Vec<Vec<f64>> = (0..m).map(|_| random(rng)).collect();
    let shared = rng.random_range(0.0..1.0);
    let y = (0..n)
        .map(|_| {
            let mut v = random(rng);
            if rng.random_bool(0.5) {
                let noise = rng.random_range(0.0..2.0);
                v.iter_mut().for_each(|c| *c *= noise);
                for col in &x {
                    let w = shared * unit.sample(rng);
                    v.iter_mut().zip(col).for_each(|(a, b)| *a += w * b);
                }
            }
            v
        })
        .collect();
    (x, y)
}

fn matrix(columns: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    embedding_matrix(columns.iter().map(Vec::as_slice))
}

/// Ridge-limit correlation against projected gradient ascent, plus the
/// identical and orthogonal edge cases.
pub fn cca_oracle_suite(pairs: usize, seed: u64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let opts = CcaOptions::absolute(1e-6);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for case in 0..pairs {
        let (x, y) = cca_pair(&mut rng);
        let got = cluster_correlation(&matrix(&x), &matrix(&y), &opts).unwrap().corr;
        let want = oracle::max_cosine_correlation(&x, &y, &mut oracle_rng);
        let err = (got - want).abs();
        worst = worst.max(err);
        if err > 1e-4 {
            failures.push(format!("pair {case}: corr {got:.8} vs oracle {want:.8}"));
        }

        let same = cluster_correlation(&matrix(&x), &matrix(&x), &opts).unwrap().corr;
        if same < 1.0 - 1e-6 {
            failures.push(format!("pair {case}: identical clusters give {same:.8}"));
        }
    }
    for d in 2..=10 {
        let e = |i: usize| -> Vec<f64> { (0..d).map(|k| if k == i { 1.0 } else { 0.0 }).collect() };
        let r = cluster_correlation(&matrix(&[e(0)]), &matrix(&[e(d - 1)]), &opts).unwrap().corr;
        worst = worst.max(r);
        if r > 1e-6 {
            failures.push(format!("orthogonal columns in d = {d} give {r:.3e}"));
        }
    }
    SuiteOutcome {
        name: "cluster correlation vs numerical maximization".into(),
        cases: pairs + 9,
        failures,
        worst_error: worst,
        elapsed: start.elapsed(),
    }
}

/// Equal profiles, the two-cluster worked example and both sides of the threshold.
pub fn relevance_suite() -> SuiteOutcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for t in 1..=8 {
        for c in [0.0, 0.3, 0.77, 1.0] {
            let (_, rele) = relevance_score(&vec![c; t], RelevanceParams::default().softmax_scale);
            worst = worst.max(rele.abs());
            if rele != 0.0 {
                failures.push(format!("{t} equal correlations {c} give rele {rele:e}"));
            }
        }
    }
    let (_, rele) = relevance_score(&[0.99, 0.01], 1.0);
    let expected = 0.107_f64;
    let direct = {
        let p = 1.0 / (1.0 + (-0.98f64).exp());
        p * (2.0 * p).ln() + (1.0 - p) * (2.0 * (1.0 - p)).ln()
    };
    worst = worst.max((rele - direct).abs());
    if (rele - direct).abs() > 1e-6 || (rele - expected).abs() > 5e-4 {
        failures.push(format!("worked example gives {rele:.6}, expected {direct:.6}"));
    }

    let params = RelevanceParams::default();
    let above = decide(0, vec![0.95, 0.1, 0.05], &params);
    let below = decide(0, vec![0.5, 0.45, 0.4], &params);
    if !(above.rele > params.threshold && above.matched == Some(0)) {
        failures.push(format!("sharp profile rele {:.4} did not match", above.rele));
    }
    if !(below.rele <= params.threshold && below.matched.is_none()) {
        failures.push(format!("flat profile rele {:.4} matched", below.rele));
    }
    SuiteOutcome {
        name: "relevance score identities and threshold".into(),
        cases: 32 + 3,
        failures,
        worst_error: worst,
        elapsed: start.elapsed(),
    }
}

pub fn run_all() -> Vec<SuiteOutcome> {
    vec![ap_oracle_suite(50, 2024), cca_oracle_suite(20, 2024), relevance_suite()]
}
