//! Affinity-propagation clustering of one seed's skip-grams.
//!
//! Skip-grams are clustered as types: each distinct context is one point,
//! its corpus count travels along as metadata.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusIndex, SkipGram, SkipGramId};
use crate::embeddings::{embed_skipgram, EmbeddingTable, SgEmbedding};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("zero-norm vector at position {0} cannot be compared by cosine")]
    DegenerateVector(usize),
    #[error("zero-norm embedding for skip-gram `{skipgram}` of seed `{seed}`")]
    DegenerateSkipGram { seed: String, skipgram: String },
    #[error("vectors have mismatched dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("seed `{0}` has no embeddable skip-gram")]
    NoEmbeddableContext(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    #[default]
    NegSqEuclidean,
}

/// How the diagonal self-similarity is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Preference {
    Value(f64),
    /// Median of the off-diagonal similarities.
    Median(MedianTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianTag {
    Median,
}

impl Preference {
    pub const MEDIAN: Preference = Preference::Median(MedianTag::Median);
}

impl Default for Preference {
    fn default() -> Self {
        Preference::Value(-60.0)
    }
}

/// Dense pairwise similarities with the preference on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    s: Vec<f64>,
}

impl SimilarityGraph {
    /// Builds a graph from a full row-major matrix; the diagonal is overwritten with `preference`.
    pub fn from_matrix(n: usize, mut s: Vec<f64>, preference: f64) -> Self {
        assert_eq!(s.len(), n * n);
        for i in 0..n {
            s[i * n + i] = preference;
        }
        Self { n, s }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.s[i * self.n + k]
    }

    pub fn preference(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.s[0]
        }
    }

    pub fn set_preference(&mut self, preference: f64) {
        for i in 0..self.n {
            self.s[i * self.n + i] = preference;
        }
    }

    /// Median of the off-diagonal entries, 0 for a single node.
    pub fn median_similarity(&self) -> f64 {
        let mut off: Vec<f64> = (0..self.n)
            .flat_map(|i| (0..self.n).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| self.get(i, k))
            .collect();
        if off.is_empty() {
            return 0.0;
        }
        off.sort_by(f64::total_cmp);
        let mid = off.len() / 2;
        if off.len() % 2 == 1 {
            off[mid]
        } else {
            0.5 * (off[mid - 1] + off[mid])
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.s.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Adds independent off-diagonal noise of relative magnitude 1e-12 to break
    /// exact ties. Each ordered pair draws its own jitter: a symmetric
    /// perturbation cannot break a node-swap symmetry.
    pub fn with_tie_noise(&self, seed: u64) -> Self {
        let n = self.n;
        let scale = (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| i * n + k))
            .map(|idx| self.s[idx].abs())
            .fold(self.preference().abs(), f64::max)
            .max(f64::MIN_POSITIVE);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = self.s.clone();
        for i in 0..n {
            for k in 0..n {
                if i != k {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    let idx = i * n + k;
                    s[idx] += 1e-12 * (s[idx].abs() + 1e-3 * scale) * u;
                }
            }
        }
        Self { n, s }
    }
}

/// Pairwise similarities under `metric`, `preference` on the diagonal.
pub fn build_similarity(vectors: &[&[f64]], metric: Metric, preference: f64) -> Result<SimilarityGraph, ClusterError> {
    let n = vectors.len();
    let d = vectors.first().map_or(0, |v| v.len());
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(ClusterError::DimensionMismatch(d, v.len()));
    }
    let norms: Vec<f64> = vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&nrm| nrm == 0.0) {
            return Err(ClusterError::DegenerateVector(i));
        }
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for k in i + 1..n {
            let value = match metric {
                Metric::Cosine => {
                    let dot: f64 = vectors[i].iter().zip(vectors[k]).map(|(a, b)| a * b).sum();
                    (dot / (norms[i] * norms[k])).clamp(-1.0, 1.0)
                }
                Metric::NegSqEuclidean => -vectors[i]
                    .iter()
                    .zip(vectors[k])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            };
            s[i * n + k] = value;
            s[k * n + i] = value;
        }
    }
    Ok(SimilarityGraph::from_matrix(n, s, preference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    /// Weight kept from the previous message, in [0.5, 1).
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to declare convergence.
    pub stable_iters: usize,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iter: 1000,
            stable_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    /// Exemplar node indices, ascending.
    pub exemplars: Vec<usize>,
    /// For every node, the index of its exemplar node.
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl ApResult {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }
}

/// Responsibility/availability message passing with damping.
///
/// Stops once the exemplar set is unchanged for `stable_iters` consecutive
/// iterations or after `max_iter`. The final exemplars are refined within
/// their clusters and every point is assigned to its most similar exemplar.
pub fn affinity_propagation(graph: &SimilarityGraph, params: &ApParams) -> ApResult {
    let n = graph.len();
    if n <= 1 {
        return ApResult {
            exemplars: (0..n).collect(),
            assignment: vec![0; n],
            iterations: 0,
            converged: true,
        };
    }
    let lambda = params.damping.clamp(0.5, 0.999_999);
    let s = &graph.s;
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut exemplars: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    for it in 0..params.max_iter {
        iterations = it + 1;
        for i in 0..n {
            let row = i * n;
            let (mut best, mut best_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[row + k] + s[row + k];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == best_k { second } else { best };
                let fresh = s[row + k] - competitor;
                r[row + k] = lambda * r[row + k] + (1.0 - lambda) * fresh;
            }
        }
        for k in 0..n {
            let self_r = r[k * n + k];
            let positive: f64 = (0..n).filter(|&i| i != k).map(|i| r[i * n + k].max(0.0)).sum();
            for i in 0..n {
                let fresh = if i == k {
                    positive
                } else {
                    (self_r + positive - r[i * n + k].max(0.0)).min(0.0)
                };
                let idx = i * n + k;
                a[idx] = lambda * a[idx] + (1.0 - lambda) * fresh;
            }
        }

        let current: Vec<usize> = (0..n).filter(|&k| a[k * n + k] + r[k * n + k] > 0.0).collect();
        if !current.is_empty() && current == exemplars {
            stable += 1;
        } else {
            stable = 0;
        }
        exemplars = current;
        if stable >= params.stable_iters {
            converged = true;
            break;
        }
    }

    if exemplars.is_empty() {
        // No point ever claimed itself: fall back to the single best exemplar.
        let best = (0..n)
            .max_by(|&x, &y| {
                let cx: f64 = (0..n).map(|i| s[i * n + x]).sum();
                let cy: f64 = (0..n).map(|i| s[i * n + y]).sum();
                cx.total_cmp(&cy).then(y.cmp(&x))
            })
            .unwrap();
        exemplars = vec![best];
        converged = false;
    }

    // A near-duplicate pair can sit on a fixed point where both points have
    // zero evidence and choose each other; promote the stronger of them.
    let evidence = |k: usize| a[k * n + k] + r[k * n + k];
    let choices: Vec<usize> = (0..n)
        .map(|i| {
            let row = i * n;
            (0..n)
                .max_by(|&x, &y| (a[row + x] + r[row + x]).total_cmp(&(a[row + y] + r[row + y])).then(y.cmp(&x)))
                .unwrap()
        })
        .collect();
    loop {
        let unresolved: Vec<usize> = (0..n)
            .filter(|i| !exemplars.contains(i) && !exemplars.contains(&choices[*i]))
            .collect();
        let Some(&promote) = unresolved
            .iter()
            .flat_map(|&i| [i, choices[i]])
            .collect::<Vec<_>>()
            .iter()
            .max_by(|&&x, &&y| evidence(x).total_cmp(&evidence(y)).then(y.cmp(&x)))
        else {
            break;
        };
        exemplars.push(promote);
        exemplars.sort_unstable();
    }

    let assignment = assign(graph, &exemplars);
    let mut refined: Vec<usize> = exemplars
        .iter()
        .map(|&e| {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == e).collect();
            *members
                .iter()
                .max_by(|&&x, &&y| {
                    let cx: f64 = members.iter().map(|&i| s[i * n + x]).sum();
                    let cy: f64 = members.iter().map(|&i| s[i * n + y]).sum();
                    cx.total_cmp(&cy).then(y.cmp(&x))
                })
                .unwrap()
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();
    let assignment = assign(graph, &refined);
    ApResult {
        exemplars: refined,
        assignment,
        iterations,
        converged,
    }
}

/// Exemplars assign to themselves, everyone else to the most similar exemplar
/// (lowest index on ties).
fn assign(graph: &SimilarityGraph, exemplars: &[usize]) -> Vec<usize> {
    (0..graph.len())
        .map(|i| {
            if exemplars.contains(&i) {
                return i;
            }
            let mut best = exemplars[0];
            for &k in &exemplars[1..] {
                if graph.get(i, k) > graph.get(i, best) {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// A skip-gram with its count and composed embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMember {
    pub id: SkipGramId,
    pub skipgram: SkipGram,
    pub count: u64,
    pub embedding: SgEmbedding,
}

/// One candidate facet of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramCluster {
    pub seed: String,
    pub members: Vec<ClusterMember>,
    /// Position of the exemplar within `members`.
    pub exemplar: usize,
}

impl SkipGramCluster {
    pub fn total_count(&self) -> u64 {
        self.members.iter().map(|m| m.count).sum()
    }

    pub fn exemplar_member(&self) -> &ClusterMember {
        &self.members[self.exemplar]
    }

    /// d×m matrix whose columns are the member embeddings in order.
    pub fn matrix(&self) -> DMatrix<f64> {
        embedding_matrix(self.members.iter().map(|m| m.embedding.vector.as_slice()))
    }
}

pub fn embedding_matrix<'a>(columns: impl Iterator<Item = &'a [f64]>) -> DMatrix<f64> {
    let columns: Vec<&[f64]> = columns.collect();
    let d = columns.first().map_or(0, |c| c.len());
    DMatrix::from_fn(d, columns.len(), |r, c| columns[c][r])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub metric: Metric,
    pub preference: Preference,
    #[serde(flatten)]
    pub ap: ApParams,
    /// Most frequent skip-grams kept per seed before clustering.
    pub max_skipgrams: usize,
    pub include_stop_only: bool,
    pub noise_seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            metric: Metric::NegSqEuclidean,
            preference: Preference::default(),
            ap: ApParams::default(),
            max_skipgrams: 500,
            include_stop_only: false,
            noise_seed: 0,
        }
    }
}

/// Clusters of one seed plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedClusters {
    pub seed: String,
    pub clusters: Vec<SkipGramCluster>,
    pub converged: bool,
    pub iterations: usize,
    /// Skip-grams dropped as stop-only, over the cap, or without embedding.
    pub dropped: usize,
}

pub fn cluster_seed(
    index: &CorpusIndex,
    table: &EmbeddingTable,
    seed: &str,
    config: &ClusterConfig,
) -> Result<SeedClusters, ClusterError> {
    let contexts = index.contexts(seed)?;
    let total = contexts.len();
    let members: Vec<ClusterMember> = contexts
        .into_iter()
        .filter(|(id, _)| config.include_stop_only || !index.is_stop_only(*id))
        .take(config.max_skipgrams)
        .filter_map(|(id, count)| {
            let skipgram = index.skipgram(id).clone();
            embed_skipgram(table, &skipgram).map(|embedding| ClusterMember {
                id,
                skipgram,
                count,
                embedding,
            })
        })
        .collect();
    if members.is_empty() {
        return Err(ClusterError::NoEmbeddableContext(seed.to_string()));
    }
    let dropped = total - members.len();

    let vectors: Vec<&[f64]> = members.iter().map(|m| m.embedding.vector.as_slice()).collect();
    let mut graph = build_similarity(&vectors, config.metric, 0.0).map_err(|e| match e {
        ClusterError::DegenerateVector(i) => ClusterError::DegenerateSkipGram {
            seed: seed.to_string(),
            skipgram: members[i].skipgram.canonical(),
        },
        other => other,
    })?;
    let preference = match config.preference {
        Preference::Value(p) => p,
        Preference::Median(_) => graph.median_similarity(),
    };
    graph.set_preference(preference);
    let result = affinity_propagation(&graph.with_tie_noise(config.noise_seed), &config.ap);
    if !result.converged {
        log::warn!(
            "affinity propagation for `{seed}` did not converge in {} iterations",
            result.iterations
        );
    }

    let mut clusters: Vec<SkipGramCluster> = result
        .exemplars
        .iter()
        .map(|&e| {
            let picked: Vec<usize> = (0..members.len()).filter(|&i| result.assignment[i] == e).collect();
            SkipGramCluster {
                seed: seed.to_string(),
                exemplar: picked.iter().position(|&i| i == e).unwrap(),
                members: picked.iter().map(|&i| members[i].clone()).collect(),
            }
        })
        .collect();
    // Members keep the (count desc, canonical) order; the first member breaks count ties.
    clusters.sort_by(|a, b| {
        b.total_count()
            .cmp(&a.total_count())
            .then_with(|| a.members[0].id.cmp(&b.members[0].id))
    });
    Ok(SeedClusters {
        seed: seed.to_string(),
        clusters,
        converged: result.converged,
        iterations: result.iterations,
        dropped,
    })
}
