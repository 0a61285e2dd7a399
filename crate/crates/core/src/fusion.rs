//! Matching skip-gram clusters across seeds.
//!
//! Two clusters are compared by the top canonical correlation of their column
//! spaces. For one reference facet, the correlations against every cluster of
//! the next seed are pushed through a softmax; the KL divergence of that
//! profile from uniform decides whether one cluster stands out enough to be
//! fused with the facet.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{embedding_matrix, SeedClusters, SkipGramCluster};
use crate::corpus::{SkipGram, SkipGramId};
use crate::embeddings::SgEmbedding;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cluster matrices have different row dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cluster matrix has no columns")]
    EmptyCluster,
    #[error("cluster matrix contains a non-finite value")]
    NonFinite,
    #[error("ridge must be positive, got {0}")]
    InvalidRidge(f64),
    #[error("no seeds to fuse")]
    NoSeeds,
    #[error("no semantic facet is shared by all seeds")]
    NoCoherentFacet(Box<FusionReport>),
}

/// Options for [`cluster_correlation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaOptions {
    /// Ridge added to both within-set Gram matrices.
    pub ridge: f64,
    /// When set, the ridge is `ridge × trace(XᵀX)/m`, i.e. relative to the mean
    /// squared column norm of each cluster.
    pub relative_ridge: bool,
    /// Subtract each column's mean before solving.
    pub centered: bool,
}

impl Default for CcaOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-3,
            relative_ridge: true,
            centered: false,
        }
    }
}

impl CcaOptions {
    pub fn absolute(ridge: f64) -> Self {
        Self {
            ridge,
            relative_ridge: false,
            centered: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    /// Cosine of the sense vectors `u` and `v`, clamped to [0, 1].
    pub corr: f64,
    /// Top singular value of the whitened cross-Gram matrix.
    pub singular_value: f64,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

fn validate(m: &DMatrix<f64>) -> Result<(), FusionError> {
    if m.ncols() == 0 {
        return Err(FusionError::EmptyCluster);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FusionError::NonFinite);
    }
    Ok(())
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// `(G + εI)^{-1/2}` for a symmetric positive semi-definite Gram matrix `G`.
fn inverse_sqrt(gram: DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let n = gram.nrows();
    let eig = (gram + DMatrix::identity(n, n) * ridge).symmetric_eigen();
    let scale = eig.eigenvalues.map(|l| 1.0 / l.max(ridge).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose()
}

fn effective_ridge(gram: &DMatrix<f64>, opts: &CcaOptions) -> f64 {
    if !opts.relative_ridge {
        return opts.ridge;
    }
    let mean_sq_norm = gram.trace() / gram.nrows() as f64;
    if mean_sq_norm > 0.0 {
        opts.ridge * mean_sq_norm
    } else {
        opts.ridge
    }
}

/// Top canonical correlation between the column spaces of `x` (d×m) and `y` (d×n).
///
/// Maximizes `aᵀXᵀYb` subject to `aᵀ(XᵀX + εI)a = 1` and `bᵀ(YᵀY + εI)b = 1`
/// via the SVD of `(XᵀX+εI)^{-1/2} XᵀY (YᵀY+εI)^{-1/2}`. The reported
/// correlation is the cosine between the resulting sense vectors `u = Xa`
/// and `v = Yb`, which is the objective of the unregularized problem
/// evaluated at the regularized optimum.
pub fn cluster_correlation(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &CcaOptions) -> Result<CcaResult, FusionError> {
    validate(x)?;
    validate(y)?;
    if x.nrows() != y.nrows() {
        return Err(FusionError::DimensionMismatch(x.nrows(), y.nrows()));
    }
    if opts.ridge.is_nan() || opts.ridge <= 0.0 || !opts.ridge.is_finite() {
        return Err(FusionError::InvalidRidge(opts.ridge));
    }
    let (x, y) = if opts.centered {
        (center_columns(x), center_columns(y))
    } else {
        (x.clone(), y.clone())
    };

    let gxx = x.transpose() * &x;
    let gyy = y.transpose() * &y;
    let (ex, ey) = (effective_ridge(&gxx, opts), effective_ridge(&gyy, opts));
    let wx = inverse_sqrt(gxx, ex);
    let wy = inverse_sqrt(gyy, ey);
    let t = &wx * (x.transpose() * &y) * &wy;

    let svd = t.svd(true, true);
    let (top, sigma) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    let p = svd.u.as_ref().unwrap().column(top).into_owned();
    let q = svd.v_t.as_ref().unwrap().row(top).transpose();

    let a = &wx * p;
    let b = &wy * q;
    let u = &x * &a;
    let v = &y * &b;
    let (nu, nv) = (u.norm(), v.norm());
    let cosine = if nu > 0.0 && nv > 0.0 { u.dot(&v) / (nu * nv) } else { 0.0 };
    Ok(CcaResult {
        corr: cosine.clamp(0.0, 1.0),
        singular_value: sigma,
        a,
        b,
        u,
        v,
    })
}

/// Softmax of `scale · values`, max-subtracted.
pub fn softmax(values: &[f64], scale: f64) -> Vec<f64> {
    let (_, log_p) = log_softmax(values, scale);
    log_p.into_iter().map(f64::exp).collect()
}

fn log_softmax(values: &[f64], scale: f64) -> (f64, Vec<f64>) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = values.iter().map(|v| scale * (v - max)).collect();
    let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    (log_z, shifted.into_iter().map(|s| s - log_z).collect())
}

/// Softmaxed profile and its KL divergence (natural log) from the uniform distribution.
///
/// Exactly 0 when all values are equal.
pub fn relevance_score(correlations: &[f64], scale: f64) -> (Vec<f64>, f64) {
    let t = correlations.len() as f64;
    let (_, log_p) = log_softmax(correlations, scale);
    let ln_t = t.ln();
    let kl: f64 = log_p
        .iter()
        .map(|&lp| {
            let p = lp.exp();
            if p > 0.0 {
                p * (lp + ln_t)
            } else {
                0.0
            }
        })
        .sum();
    let probs = log_p.into_iter().map(f64::exp).collect();
    (probs, kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceParams {
    /// Match when the relevance score exceeds this.
    pub threshold: f64,
    /// Raw-correlation threshold used when the other seed has a single cluster.
    pub fallback_threshold: f64,
    /// Multiplier on correlations inside the softmax; equivalent to a softmax base of `e^scale`.
    pub softmax_scale: f64,
}

impl Default for RelevanceParams {
    fn default() -> Self {
        Self {
            threshold: 0.25,
            fallback_threshold: 0.5,
            softmax_scale: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelevanceDecision {
    /// Index of the reference facet this decision is about.
    pub source: usize,
    pub correlations: Vec<f64>,
    pub softmaxed: Vec<f64>,
    pub rele: f64,
    /// Best-matching cluster of the other seed, when matched.
    pub matched: Option<usize>,
    /// True when the single-cluster fallback made the decision.
    pub fallback: bool,
}

/// Matching decision from a correlation profile.
pub fn decide(source: usize, correlations: Vec<f64>, params: &RelevanceParams) -> RelevanceDecision {
    assert!(!correlations.is_empty());
    let (softmaxed, rele) = relevance_score(&correlations, params.softmax_scale);
    let best = correlations
        .iter()
        .enumerate()
        .fold(0, |b, (i, &c)| if c > correlations[b] { i } else { b });
    let fallback = correlations.len() == 1;
    let matched = if fallback {
        (correlations[0] >= params.fallback_threshold).then_some(0)
    } else {
        (rele > params.threshold).then_some(best)
    };
    RelevanceDecision {
        source,
        correlations,
        softmaxed,
        rele,
        matched,
        fallback,
    }
}

/// Correlates `facet` with every cluster in `others` and decides the match.
pub fn relevance(
    facet: &DMatrix<f64>,
    others: &[DMatrix<f64>],
    params: &RelevanceParams,
    cca: &CcaOptions,
) -> Result<RelevanceDecision, FusionError> {
    if others.is_empty() {
        return Err(FusionError::EmptyCluster);
    }
    let correlations = others
        .iter()
        .map(|y| cluster_correlation(facet, y, cca).map(|r| r.corr))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(decide(0, correlations, params))
}

/// A skip-gram inside a coherent facet with the seeds that contributed it.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetMember {
    pub id: SkipGramId,
    pub skipgram: SkipGram,
    /// Summed corpus count over contributing seeds.
    pub count: u64,
    pub embedding: SgEmbedding,
    pub seeds: BTreeSet<String>,
}

/// A fused skip-gram cluster shared by every seed in `seeds_covered`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentFacet {
    pub members: Vec<FacetMember>,
    /// Seeds in fold order.
    pub seeds_covered: Vec<String>,
}

impl CoherentFacet {
    pub fn from_cluster(cluster: &SkipGramCluster) -> Self {
        Self {
            members: cluster
                .members
                .iter()
                .map(|m| FacetMember {
                    id: m.id,
                    skipgram: m.skipgram.clone(),
                    count: m.count,
                    embedding: m.embedding.clone(),
                    seeds: BTreeSet::from([cluster.seed.clone()]),
                })
                .collect(),
            seeds_covered: vec![cluster.seed.clone()],
        }
    }

    /// Union with a cluster of another seed. Skip-grams already present gain
    /// the new seed and its count.
    pub fn union(&self, cluster: &SkipGramCluster) -> Self {
        let mut out = self.clone();
        for m in &cluster.members {
            match out.members.iter_mut().find(|f| f.id == m.id) {
                Some(existing) => {
                    existing.count += m.count;
                    existing.seeds.insert(cluster.seed.clone());
                }
                None => out.members.push(FacetMember {
                    id: m.id,
                    skipgram: m.skipgram.clone(),
                    count: m.count,
                    embedding: m.embedding.clone(),
                    seeds: BTreeSet::from([cluster.seed.clone()]),
                }),
            }
        }
        if !out.seeds_covered.contains(&cluster.seed) {
            out.seeds_covered.push(cluster.seed.clone());
        }
        out
    }

    pub fn total_count(&self) -> u64 {
        self.members.iter().map(|m| m.count).sum()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        embedding_matrix(self.members.iter().map(|m| m.embedding.vector.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FusionConfig {
    #[serde(flatten)]
    pub cca: CcaOptions,
    #[serde(flatten)]
    pub relevance: RelevanceParams,
}

/// One fold step: reference facets against the clusters of the next seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub reference_seeds: Vec<String>,
    pub current_seed: String,
    pub reference_sizes: Vec<usize>,
    pub current_sizes: Vec<usize>,
    pub decisions: Vec<RelevanceDecision>,
}

impl PairReport {
    pub fn matched(&self) -> usize {
        self.decisions.iter().filter(|d| d.matched.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FusionReport {
    pub seeds: Vec<String>,
    pub steps: Vec<PairReport>,
}

/// Matches every reference facet into the current seed's clusters. Unmatched
/// facets are dropped; one current cluster may absorb several facets.
pub fn fuse_pair(
    reference: &[CoherentFacet],
    current: &[SkipGramCluster],
    config: &FusionConfig,
) -> Result<(Vec<CoherentFacet>, PairReport), FusionError> {
    if current.is_empty() {
        return Err(FusionError::EmptyCluster);
    }
    let current_matrices: Vec<DMatrix<f64>> = current.iter().map(SkipGramCluster::matrix).collect();
    let decisions = reference
        .par_iter()
        .enumerate()
        .map(|(i, facet)| {
            let x = facet.matrix();
            let correlations = current_matrices
                .iter()
                .map(|y| cluster_correlation(&x, y, &config.cca).map(|r| r.corr))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(decide(i, correlations, &config.relevance))
        })
        .collect::<Result<Vec<_>, FusionError>>()?;

    let fused = decisions
        .iter()
        .filter_map(|d| d.matched.map(|j| reference[d.source].union(&current[j])))
        .collect();
    let report = PairReport {
        reference_seeds: reference.first().map(|f| f.seeds_covered.clone()).unwrap_or_default(),
        current_seed: current[0].seed.clone(),
        reference_sizes: reference.iter().map(|f| f.members.len()).collect(),
        current_sizes: current.iter().map(|c| c.members.len()).collect(),
        decisions,
    };
    Ok((fused, report))
}

/// Result of folding all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub facets: Vec<CoherentFacet>,
    pub report: FusionReport,
}

/// Left fold of [`fuse_pair`] over seeds in the given order. A single seed's
/// clusters are returned unchanged as facets.
pub fn fuse_all(per_seed: &[SeedClusters], config: &FusionConfig) -> Result<Fusion, FusionError> {
    let (first, rest) = per_seed.split_first().ok_or(FusionError::NoSeeds)?;
    let mut report = FusionReport {
        seeds: per_seed.iter().map(|s| s.seed.clone()).collect(),
        steps: Vec::new(),
    };
    let mut facets: Vec<CoherentFacet> = first.clusters.iter().map(CoherentFacet::from_cluster).collect();
    for seed in rest {
        let (next, step) = fuse_pair(&facets, &seed.clusters, config)?;
        log::info!(
            "fused `{}` into {:?}: {} of {} facets matched",
            step.current_seed,
            step.reference_seeds,
            step.matched(),
            facets.len()
        );
        report.steps.push(step);
        facets = next;
        if facets.is_empty() {
            return Err(FusionError::NoCoherentFacet(Box::new(report)));
        }
    }
    Ok(Fusion { facets, report })
}
