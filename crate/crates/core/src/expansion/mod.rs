//! Candidate scoring and per-facet expansion.

pub mod sidecar;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_seed, ClusterConfig, ClusterError, SeedClusters};
use crate::corpus::{CorpusError, CorpusIndex, SkipGram};
use crate::embeddings::EmbeddingTable;
use crate::fusion::{fuse_all, CoherentFacet, FusionConfig, FusionError, FusionReport};

use self::sidecar::{SidecarClient, SlotQuery, WIRE_SLOT};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("malformed sidecar reply: {0}")]
    Protocol(String),
    #[error("sidecar rejected request {id}: {message}")]
    Remote { id: i64, message: String },
    #[error("invalid score request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Scorer(#[from] ScoreError),
    #[error("no candidate scored above zero for facet {0}")]
    EmptyExpansion(usize),
    #[error("query has no seeds")]
    EmptyQuery,
    #[error("n must be at least 1")]
    ZeroN,
}

impl ExpansionError {
    /// The unknown seed, if that is what failed.
    pub fn unknown_entity(&self) -> Option<&str> {
        match self {
            Self::Corpus(CorpusError::UnknownEntity(e)) | Self::Cluster(ClusterError::Corpus(CorpusError::UnknownEntity(e))) => {
                Some(e)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    /// Index vocabulary intersected with whatever the scorer proposes.
    #[default]
    IndexVocabulary,
    ScorerVocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    /// Canonical skip-gram strings containing the slot marker.
    pub skipgrams: Vec<String>,
    pub scope: CandidateScope,
    pub top_k: usize,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.skipgrams.is_empty() {
            return Err(ScoreError::InvalidRequest("no skip-grams".into()));
        }
        if self.top_k == 0 {
            return Err(ScoreError::InvalidRequest("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse scores, one column per requested skip-gram.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreMatrix {
    pub columns: Vec<Vec<(String, f64)>>,
}

impl ScoreMatrix {
    pub fn get(&self, candidate: &str, column: usize) -> f64 {
        self.columns[column]
            .iter()
            .find(|(c, _)| c == candidate)
            .map_or(0.0, |(_, h)| *h)
    }
}

pub trait Scorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, request: &ScoreRequest) -> Result<ScoreMatrix, ScoreError>;
}

/// Co-occurrence scorer: `h(c, sg) = count(c, sg) / Σ_c' count(c', sg)`.
#[derive(Debug, Clone, Copy)]
pub struct CorpusScorer<'a> {
    index: &'a CorpusIndex,
}

impl<'a> CorpusScorer<'a> {
    pub fn new(index: &'a CorpusIndex) -> Self {
        Self { index }
    }
}

impl Scorer for CorpusScorer<'_> {
    fn name(&self) -> &str {
        "corpus"
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreMatrix, ScoreError> {
        request.validate()?;
        let columns = request
            .skipgrams
            .iter()
            .map(|sg| {
                let Some(id) = self.index.skipgram_id(sg) else {
                    return Vec::new();
                };
                let column = self.index.skipgram_column(id);
                let total: u64 = column.iter().map(|(_, n)| n).sum();
                let mut scored: Vec<(String, f64, u64)> = column
                    .iter()
                    .map(|(e, n)| (self.index.entity(*e).to_string(), *n as f64 / total as f64, *n))
                    .collect();
                scored.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
                scored.truncate(request.top_k);
                scored.into_iter().map(|(e, h, _)| (e, h)).collect()
            })
            .collect();
        Ok(ScoreMatrix { columns })
    }
}

/// Turns a canonical skip-gram into the sidecar's `left [SLOT] right` text.
pub fn slot_text(canonical: &str) -> Result<String, ScoreError> {
    let sg = SkipGram::parse(canonical).map_err(|e| ScoreError::InvalidRequest(e.to_string()))?;
    let mut parts: Vec<&str> = sg.left.iter().map(String::as_str).collect();
    parts.push(WIRE_SLOT);
    parts.extend(sg.right.iter().map(String::as_str));
    Ok(parts.join(" "))
}

/// Scorer backed by the masked-language-model sidecar.
pub struct MlmScorer<'a> {
    client: Mutex<SidecarClient>,
    name: String,
    index: Option<&'a CorpusIndex>,
}

impl<'a> MlmScorer<'a> {
    /// With an index, [`CandidateScope::IndexVocabulary`] keeps only tokens
    /// the index knows as entities.
    pub fn new(client: SidecarClient, index: Option<&'a CorpusIndex>) -> Self {
        let name = format!("mlm:{}", client.model());
        Self {
            client: Mutex::new(client),
            name,
            index,
        }
    }
}

impl Scorer for MlmScorer<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreMatrix, ScoreError> {
        request.validate()?;
        let queries = request
            .skipgrams
            .iter()
            .map(|sg| {
                Ok(SlotQuery {
                    text: slot_text(sg)?,
                    top_k: request.top_k,
                })
            })
            .collect::<Result<Vec<_>, ScoreError>>()?;
        let replies = self
            .client
            .lock()
            .map_err(|_| ScoreError::ScorerUnavailable("sidecar client poisoned".into()))?
            .score_batch(&queries)?;
        let columns = replies
            .into_iter()
            .map(|tokens| {
                let mut seen = HashSet::new();
                tokens
                    .into_iter()
                    .map(|(t, p)| (t.to_lowercase(), p))
                    .filter(|(t, _)| seen.insert(t.clone()))
                    .filter(|(t, _)| match (request.scope, self.index) {
                        (CandidateScope::IndexVocabulary, Some(index)) => index.entity_id(t).is_some(),
                        _ => true,
                    })
                    .collect()
            })
            .collect();
        Ok(ScoreMatrix { columns })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every distinct skip-gram contributes once.
    #[default]
    Distinct,
    /// Contributions are multiplied by the skip-gram's count in the facet.
    FrequencyWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpandParams {
    /// Entities returned per facet.
    pub n: usize,
    /// Candidates kept per skip-gram.
    pub top_k: usize,
    pub weighting: Weighting,
    pub scope: CandidateScope,
}

impl Default for ExpandParams {
    fn default() -> Self {
        Self {
            n: 20,
            top_k: 200,
            weighting: Weighting::Distinct,
            scope: CandidateScope::IndexVocabulary,
        }
    }
}

/// Ranked output for one facet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetExpansion {
    pub id: usize,
    pub skipgram_count: usize,
    pub total_count: u64,
    pub entities: Vec<(String, f64)>,
    pub scorer: String,
}

/// Sums `h(c, sg)` over the given skip-grams with their multiplicities.
pub fn candidate_weights(matrix: &ScoreMatrix, multiplicity: &[f64]) -> BTreeMap<String, f64> {
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    for (column, m) in matrix.columns.iter().zip(multiplicity) {
        for (c, h) in column {
            *weights.entry(c.clone()).or_insert(0.0) += h * m;
        }
    }
    weights
}

/// Orders by weight, then corpus frequency, then spelling; drops seeds and
/// non-positive weights and keeps the top `n`.
pub fn rank_candidates(
    weights: BTreeMap<String, f64>,
    seeds: &BTreeSet<String>,
    n: usize,
    frequency: impl Fn(&str) -> u64,
) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64, u64)> = weights
        .into_iter()
        .filter(|(c, w)| *w > 0.0 && !seeds.contains(c))
        .map(|(c, w)| {
            let f = frequency(&c);
            (c, w, f)
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| b.2.cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(n);
    ranked.into_iter().map(|(c, w, _)| (c, w)).collect()
}

pub fn expand_facet(
    id: usize,
    facet: &CoherentFacet,
    scorer: &dyn Scorer,
    seeds: &BTreeSet<String>,
    index: &CorpusIndex,
    params: &ExpandParams,
) -> Result<FacetExpansion, ExpansionError> {
    if params.n == 0 {
        return Err(ExpansionError::ZeroN);
    }
    if facet.members.is_empty() {
        return Err(FusionError::EmptyCluster.into());
    }
    let request = ScoreRequest {
        skipgrams: facet.members.iter().map(|m| m.skipgram.canonical()).collect(),
        scope: params.scope,
        top_k: params.top_k,
    };
    let matrix = scorer.score(&request)?;
    let multiplicity: Vec<f64> = facet
        .members
        .iter()
        .map(|m| match params.weighting {
            Weighting::Distinct => 1.0,
            Weighting::FrequencyWeighted => m.count as f64,
        })
        .collect();
    let entities = rank_candidates(candidate_weights(&matrix, &multiplicity), seeds, params.n, |c| {
        index.frequency(c)
    });
    if entities.is_empty() {
        return Err(ExpansionError::EmptyExpansion(id));
    }
    Ok(FacetExpansion {
        id,
        skipgram_count: facet.members.len(),
        total_count: facet.total_count(),
        entities,
        scorer: scorer.name().to_string(),
    })
}

/// Per-seed clustering summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: String,
    pub clusters: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub dropped: usize,
}

impl From<&SeedClusters> for SeedSummary {
    fn from(s: &SeedClusters) -> Self {
        Self {
            seed: s.seed.clone(),
            clusters: s.clusters.iter().map(|c| c.members.len()).collect(),
            converged: s.converged,
            iterations: s.iterations,
            dropped: s.dropped,
        }
    }
}

/// Order in which seeds are folded during fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldOrder {
    /// As given in the query.
    #[default]
    Query,
    /// Most frequent seed first.
    FrequencyDesc,
    FrequencyAsc,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ExpandConfig {
    pub cluster: ClusterConfig,
    pub fusion: FusionConfig,
    pub expand: ExpandParams,
    pub fold_order: FoldOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryExpansion {
    pub seeds: Vec<String>,
    pub facets: Vec<FacetExpansion>,
    pub report: FusionReport,
    pub seed_summaries: Vec<SeedSummary>,
}

/// Normalizes entity spellings: lowercase, spaces to underscores.
pub fn normalize_entity(s: &str) -> String {
    s.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join("_")
}

/// Full pipeline for one query: cluster every seed, fuse in seed order,
/// expand each surviving facet.
pub fn expand_query(
    query: &[String],
    index: &CorpusIndex,
    table: &EmbeddingTable,
    scorer: &dyn Scorer,
    config: &ExpandConfig,
) -> Result<QueryExpansion, ExpansionError> {
    let mut seeds: Vec<String> = Vec::new();
    for s in query.iter().map(|s| normalize_entity(s)) {
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    if seeds.is_empty() {
        return Err(ExpansionError::EmptyQuery);
    }
    if let Some(missing) = seeds.iter().find(|s| index.entity_id(s).is_none()) {
        return Err(CorpusError::UnknownEntity(missing.clone()).into());
    }
    match config.fold_order {
        FoldOrder::Query => {}
        FoldOrder::FrequencyDesc => seeds.sort_by_key(|s| std::cmp::Reverse(index.frequency(s))),
        FoldOrder::FrequencyAsc => seeds.sort_by_key(|s| index.frequency(s)),
    }

    let per_seed = seeds
        .par_iter()
        .map(|s| cluster_seed(index, table, s, &config.cluster))
        .collect::<Result<Vec<_>, _>>()?;
    let fusion = fuse_all(&per_seed, &config.fusion)?;

    let mut facets = fusion.facets;
    facets.sort_by(|a, b| {
        b.total_count()
            .cmp(&a.total_count())
            .then_with(|| a.members[0].id.cmp(&b.members[0].id))
    });
    let seed_set: BTreeSet<String> = seeds.iter().cloned().collect();
    let expanded = facets
        .par_iter()
        .enumerate()
        .map(|(i, f)| match expand_facet(i, f, scorer, &seed_set, index, &config.expand) {
            Err(ExpansionError::EmptyExpansion(_)) => Ok(None),
            other => other.map(Some),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for (i, e) in expanded.into_iter().enumerate() {
        match e {
            Some(mut e) => {
                e.id = out.len();
                out.push(e);
            }
            None => log::warn!("facet {i} produced no candidates and was skipped"),
        }
    }
    Ok(QueryExpansion {
        seeds,
        facets: out,
        report: fusion.report,
        seed_summaries: per_seed.iter().map(SeedSummary::from).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_index, IndexConfig};

    fn tiny_index() -> CorpusIndex {
        let text = "we ate mango today\nwe ate mango today\nwe ate kiwi today\nwe ate mango today\n";
        let cfg = IndexConfig {
            window: 2,
            min_freq: 1,
            stop_words: Default::default(),
            ..IndexConfig::default()
        };
        build_index(text.as_bytes(), &cfg).unwrap()
    }

    #[test]
    fn corpus_scores_are_normalized_columns() {
        let index = tiny_index();
        let scorer = CorpusScorer::new(&index);
        let m = scorer
            .score(&ScoreRequest {
                skipgrams: vec!["we ate __ today".into(), "never seen __".into()],
                scope: CandidateScope::IndexVocabulary,
                top_k: 10,
            })
            .unwrap();
        assert_eq!(m.get("mango", 0), 0.75);
        assert_eq!(m.get("kiwi", 0), 0.25);
        assert!(m.columns[1].is_empty());
    }

    #[test]
    fn summation_and_seed_exclusion() {
        let matrix = ScoreMatrix {
            columns: vec![
                vec![("x".into(), 0.4), ("seed".into(), 0.9)],
                vec![("x".into(), 0.3), ("y".into(), 0.7)],
            ],
        };
        let w = candidate_weights(&matrix, &[1.0, 1.0]);
        assert!((w["x"] - 0.7).abs() < 1e-15);
        let seeds: BTreeSet<String> = ["seed".to_string()].into();
        let ranked = rank_candidates(w, &seeds, 10, |_| 0);
        assert_eq!(ranked.len(), 2);
        assert!(ranked.iter().all(|(c, _)| c != "seed"));
    }

    #[test]
    fn ties_break_by_frequency_then_spelling() {
        let w: BTreeMap<String, f64> = [("b", 0.5), ("a", 0.5), ("c", 0.5)]
            .into_iter()
            .map(|(c, v)| (c.to_string(), v))
            .collect();
        let ranked = rank_candidates(w, &BTreeSet::new(), 3, |c| if c == "c" { 9 } else { 1 });
        let names: Vec<&str> = ranked.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
    }

    #[test]
    fn slot_text_translation() {
        assert_eq!(slot_text("capital of __ is").unwrap(), "capital of [SLOT] is");
        assert_eq!(slot_text("__ river").unwrap(), "[SLOT] river");
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_entity(" New  York "), "new_york");
    }
}
