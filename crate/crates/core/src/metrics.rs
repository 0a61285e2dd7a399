//! Multi-faceted evaluation: AP@l, MMAP, PMAP, BMAP and facet-count distances.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::expansion::normalize_entity;

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("gold facet is empty")]
    EmptyGold,
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },
}

fn schema(pointer: String, message: impl Into<String>) -> MetricError {
    MetricError::Schema {
        pointer,
        message: message.into(),
    }
}

/// Average precision of the first `l` entries, normalized by `min(l, |gold|)`.
/// Lists shorter than `l` are not padded.
pub fn ap_at_l(ranked: &[String], gold: &HashSet<String>, l: usize) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    if l == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, e) in ranked.iter().take(l).enumerate() {
        if gold.contains(e) {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / l.min(gold.len()) as f64)
}

/// `2ab / (a + b)`, zero when either side is zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldQuery {
    pub query_id: String,
    pub seeds: Vec<String>,
    pub facets: Vec<HashSet<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedQuery {
    pub query_id: Option<String>,
    pub seeds: Vec<String>,
    pub facets: Vec<Vec<String>>,
}

/// `ap[f][m]` = AP@l of predicted facet f against gold facet m.
fn ap_table(pred: &PredictedQuery, gold: &GoldQuery, l: usize) -> Result<Vec<Vec<f64>>, MetricError> {
    pred.facets
        .iter()
        .map(|b| gold.facets.iter().map(|g| ap_at_l(b, g, l)).collect())
        .collect()
}

pub fn mmap(pred: &PredictedQuery, gold: &GoldQuery, l: usize) -> Result<f64, MetricError> {
    if pred.facets.is_empty() {
        return Ok(0.0);
    }
    let ap = ap_table(pred, gold, l)?;
    let sum: f64 = (0..gold.facets.len())
        .map(|m| ap.iter().map(|row| row[m]).fold(0.0, f64::max))
        .sum();
    Ok(sum / gold.facets.len() as f64)
}

pub fn pmap(pred: &PredictedQuery, gold: &GoldQuery, l: usize) -> Result<f64, MetricError> {
    if pred.facets.is_empty() {
        return Ok(0.0);
    }
    let ap = ap_table(pred, gold, l)?;
    let sum: f64 = ap.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).sum();
    Ok(sum / pred.facets.len() as f64)
}

pub fn bmap(pred: &PredictedQuery, gold: &GoldQuery, l: usize) -> Result<f64, MetricError> {
    Ok(harmonic_mean(mmap(pred, gold, l)?, pmap(pred, gold, l)?))
}

/// `(l1, l2)` distances between gold and generated facet counts.
pub fn facet_count_distance(gold: &[usize], generated: &[usize]) -> (f64, f64) {
    assert_eq!(gold.len(), generated.len());
    let diffs: Vec<f64> = gold.iter().zip(generated).map(|(&g, &p)| g as f64 - p as f64).collect();
    let l1 = diffs.iter().map(|d| d.abs()).sum();
    let l2 = diffs.iter().map(|d| d * d).sum::<f64>().sqrt();
    (l1, l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffScores {
    pub l: usize,
    pub mmap: f64,
    pub pmap: f64,
    pub bmap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryScores {
    pub query_id: String,
    pub gold_facets: usize,
    pub predicted_facets: usize,
    pub matched: bool,
    pub cutoffs: Vec<CutoffScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetCount {
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub queries: usize,
    pub cutoffs: Vec<CutoffScores>,
    pub facet_count: FacetCount,
    pub per_query: Vec<QueryScores>,
}

impl EvalReport {
    /// Aligned table: metrics as column groups, cutoffs inside each group.
    pub fn table(&self) -> String {
        let mut header = format!("{:<10}", "");
        let mut row = format!("{:<10}", "facetset");
        for name in ["MMAP", "PMAP", "BMAP"] {
            for c in &self.cutoffs {
                header.push_str(&format!(" {:>8}", format!("{name}@{}", c.l)));
                let v = match name {
                    "MMAP" => c.mmap,
                    "PMAP" => c.pmap,
                    _ => c.bmap,
                };
                row.push_str(&format!(" {v:>8.3}"));
            }
        }
        let mut out = String::new();
        writeln!(out, "{header}").unwrap();
        writeln!(out, "{row}").unwrap();
        writeln!(
            out,
            "facet count distance over {} queries: l1 = {}, l2 = {:.2}",
            self.queries, self.facet_count.l1, self.facet_count.l2
        )
        .unwrap();
        out
    }
}

fn seed_key(seeds: &[String]) -> BTreeSet<String> {
    seeds.iter().cloned().collect()
}

/// Pairs each gold query with a prediction by query id, falling back to the
/// seed set. Gold queries without a prediction score zero.
pub fn evaluate(golds: &[GoldQuery], preds: &[PredictedQuery], cutoffs: &[usize]) -> Result<EvalReport, MetricError> {
    if cutoffs.contains(&0) {
        return Err(MetricError::ZeroCutoff);
    }
    let empty = PredictedQuery {
        query_id: None,
        seeds: Vec::new(),
        facets: Vec::new(),
    };
    let paired: Vec<(&GoldQuery, &PredictedQuery, bool)> = golds
        .iter()
        .map(|g| {
            let found = preds
                .iter()
                .find(|p| p.query_id.as_deref() == Some(g.query_id.as_str()))
                .or_else(|| {
                    preds
                        .iter()
                        .find(|p| p.query_id.is_none() && seed_key(&p.seeds) == seed_key(&g.seeds))
                });
            (g, found.unwrap_or(&empty), found.is_some())
        })
        .collect();
    for p in preds {
        if !paired.iter().any(|(_, q, m)| *m && std::ptr::eq(*q, p)) {
            log::warn!("prediction {:?} {:?} matches no gold query", p.query_id, p.seeds);
        }
    }

    let per_query = paired
        .par_iter()
        .map(|(g, p, matched)| {
            let cutoffs = cutoffs
                .iter()
                .map(|&l| {
                    let m = mmap(p, g, l)?;
                    let pm = pmap(p, g, l)?;
                    Ok(CutoffScores {
                        l,
                        mmap: m,
                        pmap: pm,
                        bmap: harmonic_mean(m, pm),
                    })
                })
                .collect::<Result<Vec<_>, MetricError>>()?;
            Ok(QueryScores {
                query_id: g.query_id.clone(),
                gold_facets: g.facets.len(),
                predicted_facets: p.facets.len(),
                matched: *matched,
                cutoffs,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;

    let q = per_query.len().max(1) as f64;
    let averaged = cutoffs
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mean = |f: fn(&CutoffScores) -> f64| per_query.iter().map(|s| f(&s.cutoffs[i])).sum::<f64>() / q;
            CutoffScores {
                l,
                mmap: mean(|c| c.mmap),
                pmap: mean(|c| c.pmap),
                bmap: mean(|c| c.bmap),
            }
        })
        .collect();
    let gold_counts: Vec<usize> = per_query.iter().map(|s| s.gold_facets).collect();
    let pred_counts: Vec<usize> = per_query.iter().map(|s| s.predicted_facets).collect();
    let (l1, l2) = facet_count_distance(&gold_counts, &pred_counts);
    Ok(EvalReport {
        queries: per_query.len(),
        cutoffs: averaged,
        facet_count: FacetCount { l1, l2 },
        per_query,
    })
}

fn field<'a>(obj: &'a Value, key: &str, at: &str) -> Result<&'a Value, MetricError> {
    obj.get(key)
        .ok_or_else(|| schema(at.to_string(), format!("missing field `{key}`")))
}

fn string_list(v: &Value, at: &str) -> Result<Vec<String>, MetricError> {
    let arr = v.as_array().ok_or_else(|| schema(at.to_string(), "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, s)| {
            s.as_str()
                .map(normalize_entity)
                .ok_or_else(|| schema(format!("{at}/{i}"), "expected a string"))
        })
        .collect()
}

fn query_id(v: &Value, at: &str) -> Result<Option<String>, MetricError> {
    match v.get("query_id") {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(_) => Err(schema(format!("{at}/query_id"), "expected a string or number")),
    }
}

/// Parses a gold file: a list of `{query_id, seeds, facets: [[entity, ...], ...]}`.
pub fn parse_gold(doc: &Value) -> Result<Vec<GoldQuery>, MetricError> {
    let arr = doc.as_array().ok_or_else(|| schema(String::new(), "expected an array of queries"))?;
    arr.iter()
        .enumerate()
        .map(|(i, q)| {
            let at = format!("/{i}");
            if !q.is_object() {
                return Err(schema(at, "expected an object"));
            }
            let id = query_id(q, &at)?.ok_or_else(|| schema(format!("{at}/query_id"), "missing field `query_id`"))?;
            let seeds = string_list(field(q, "seeds", &at)?, &format!("{at}/seeds"))?;
            let facets_at = format!("{at}/facets");
            let raw = field(q, "facets", &at)?
                .as_array()
                .ok_or_else(|| schema(facets_at.clone(), "expected an array"))?;
            if raw.is_empty() {
                return Err(schema(facets_at, "a gold query needs at least one facet"));
            }
            let facets = raw
                .iter()
                .enumerate()
                .map(|(m, f)| {
                    let fat = format!("{facets_at}/{m}");
                    let list = string_list(f, &fat)?;
                    if list.is_empty() {
                        return Err(schema(fat, "gold facet is empty"));
                    }
                    Ok(list.into_iter().collect::<HashSet<_>>())
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(GoldQuery {
                query_id: id,
                seeds,
                facets,
            })
        })
        .collect()
}

fn parse_prediction(q: &Value, at: &str) -> Result<PredictedQuery, MetricError> {
    if !q.is_object() {
        return Err(schema(at.to_string(), "expected an object"));
    }
    let seeds = string_list(field(q, "query", at)?, &format!("{at}/query"))?;
    let facets_at = format!("{at}/facets");
    let raw = field(q, "facets", at)?
        .as_array()
        .ok_or_else(|| schema(facets_at.clone(), "expected an array"))?;
    let facets = raw
        .iter()
        .enumerate()
        .map(|(f, facet)| {
            let fat = format!("{facets_at}/{f}");
            let entities_at = format!("{fat}/entities");
            let entries = field(facet, "entities", &fat)?
                .as_array()
                .ok_or_else(|| schema(entities_at.clone(), "expected an array"))?;
            let mut seen = HashSet::new();
            entries
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let eat = format!("{entities_at}/{k}");
                    let name = match e {
                        Value::String(s) => s.as_str(),
                        Value::Array(pair) => match (pair.first(), pair.get(1), pair.len()) {
                            (Some(Value::String(s)), Some(Value::Number(_)), 2) => s.as_str(),
                            _ => return Err(schema(eat, "expected [entity, weight]")),
                        },
                        _ => return Err(schema(eat, "expected [entity, weight]")),
                    };
                    let name = normalize_entity(name);
                    if !seen.insert(name.clone()) {
                        return Err(schema(eat, format!("duplicate entity `{name}`")));
                    }
                    Ok(name)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictedQuery {
        query_id: query_id(q, at)?,
        seeds,
        facets,
    })
}

/// Parses expansion output: one object or an array of them.
pub fn parse_predictions(doc: &Value) -> Result<Vec<PredictedQuery>, MetricError> {
    match doc {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, q)| parse_prediction(q, &format!("/{i}")))
            .collect(),
        other => Ok(vec![parse_prediction(other, "")?]),
    }
}
