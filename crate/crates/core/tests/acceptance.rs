//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::HashSet;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{facet_lists, path_str, planted_workspace};
use facetset::corpus::IndexConfig;
use facetset::expansion::{expand_query, CorpusScorer, ExpandConfig};
use facetset::metrics::{ap_at_l, facet_count_distance, harmonic_mean, mmap, pmap, GoldQuery, PredictedQuery};
use facetset::planted::{apple_amazon, beijing_london, generate, PlantConfig};
use facetset::selftest::{ap_oracle_suite, cca_oracle_suite, relevance_suite, SuiteOutcome};

type Verdict = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Verdict>);

fn suite(outcome: SuiteOutcome, budget: Option<Duration>) -> Verdict {
    let summary = format!(
        "{} cases, worst deviation {:.2e}, {:.2} s",
        outcome.cases,
        outcome.worst_error,
        outcome.elapsed.as_secs_f64()
    );
    if !outcome.passed() {
        return Err(format!("{summary}; {}", outcome.failures.join("; ")));
    }
    match budget {
        Some(b) if outcome.elapsed > b => Err(format!("{summary}; over the {} s budget", b.as_secs())),
        _ => Ok(summary),
    }
}

fn two_cities() -> Verdict {
    let start = Instant::now();
    let corpus = generate(&beijing_london(), &PlantConfig::default());
    let index = corpus.index(&IndexConfig::default()).map_err(|e| e.to_string())?;
    let table = corpus.embedding_table().map_err(|e| e.to_string())?;
    let seeds = vec!["beijing".to_string(), "london".to_string()];
    let out = expand_query(&seeds, &index, &table, &CorpusScorer::new(&index), &ExpandConfig::default())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if out.facets.len() != 2 {
        return Err(format!("{} facets", out.facets.len()));
    }
    let mut plants = Vec::new();
    for f in &out.facets {
        let top: Vec<&String> = f.entities.iter().take(5).map(|(e, _)| e).collect();
        let plant = corpus
            .topics
            .iter()
            .find(|t| top.len() == 5 && top.iter().all(|e| t.contains(e)))
            .ok_or_else(|| format!("facet {} top-5 {top:?} mixes plants", f.id))?;
        plants.push(plant.name.clone());
    }
    plants.sort();
    if plants != ["capital", "olympic"] {
        return Err(format!("facets map to {plants:?}"));
    }
    if elapsed > Duration::from_secs(30) {
        return Err(format!("{:.2} s", elapsed.as_secs_f64()));
    }
    Ok(format!(
        "{} documents, facets {plants:?}, {:.2} s",
        corpus.lines.len(),
        elapsed.as_secs_f64()
    ))
}

fn ambiguous_seed() -> Verdict {
    let corpus = generate(&apple_amazon(), &PlantConfig::default());
    let index = corpus.index(&IndexConfig::default()).map_err(|e| e.to_string())?;
    let table = corpus.embedding_table().map_err(|e| e.to_string())?;
    let seeds = vec!["apple".to_string(), "amazon".to_string()];
    let out = expand_query(&seeds, &index, &table, &CorpusScorer::new(&index), &ExpandConfig::default())
        .map_err(|e| e.to_string())?;
    if out.facets.len() != 1 {
        return Err(format!("{} facets", out.facets.len()));
    }
    let fruit = corpus.topic("fruit").expect("fruit plant");
    let top: Vec<&String> = out.facets[0].entities.iter().take(10).map(|(e, _)| e).collect();
    let leaked: Vec<&&String> = top.iter().filter(|e| fruit.contains(e)).collect();
    if !leaked.is_empty() {
        return Err(format!("fruit in top-10: {leaked:?}"));
    }
    Ok(format!("1 facet, top-10 {top:?}"))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn check(ok: bool, what: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn metric_fixtures() -> Verdict {
    let g: HashSet<String> = strings(&["a", "b"]).into_iter().collect();
    let ap = ap_at_l(&strings(&["a", "x", "b"]), &g, 3).map_err(|e| e.to_string())?;
    check((ap - 0.8333333333).abs() <= 1e-9, &format!("AP@3 = {ap}"))?;
    for x in [0.0, 0.25, 0.531, 1.0] {
        check(harmonic_mean(x, x) == x, &format!("HMean({x},{x})"))?;
    }
    check(harmonic_mean(1.0, 0.0) == 0.0, "HMean(1,0)")?;
    let (l1, l2) = facet_count_distance(&[2, 2, 4], &[5, 1, 4]);
    check(l1 == 4.0 && (l2 - 10f64.sqrt()).abs() <= 1e-12, &format!("distances ({l1}, {l2})"))?;

    let gold = GoldQuery {
        query_id: "q".into(),
        seeds: strings(&["s"]),
        facets: vec![
            strings(&["a", "b", "c"]).into_iter().collect(),
            strings(&["d", "e"]).into_iter().collect(),
        ],
    };
    let facets = vec![strings(&["a", "x", "b"]), strings(&["y", "d"]), strings(&["z"])];
    for dup in 0..facets.len() {
        let base = PredictedQuery {
            query_id: Some("q".into()),
            seeds: strings(&["s"]),
            facets: facets.clone(),
        };
        let mut doubled = base.clone();
        doubled.facets.push(facets[dup].clone());
        let (m0, m1) = (mmap(&base, &gold, 3).unwrap(), mmap(&doubled, &gold, 3).unwrap());
        check(m0 == m1, &format!("MMAP changed on duplicating facet {dup}"))?;
        let (p0, p1) = (pmap(&base, &gold, 3).unwrap(), pmap(&doubled, &gold, 3).unwrap());
        let best = gold.facets.iter().map(|f| ap_at_l(&facets[dup], f, 3).unwrap()).fold(0.0, f64::max);
        if best <= p0 {
            check(p1 <= p0, &format!("PMAP rose on duplicating weak facet {dup}"))?;
        }
    }
    Ok(format!("AP@3 = {ap:.10}, distances (4, {l2:.6})"))
}

fn determinism() -> Verdict {
    let ws = planted_workspace(&beijing_london());
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let out_path = ws.path(&format!("run{i}.json"));
        let diag_path = ws.path(&format!("diag{i}.json"));
        let out = ws.expand(
            "beijing,london",
            &[
                "--threads",
                threads,
                "--out",
                path_str(&out_path),
                "--diagnostics",
                path_str(&diag_path),
                "--json",
            ],
        );
        if out.status.code() != Some(0) {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        let file = fs::read(&out_path).map_err(|e| e.to_string())?;
        let diag = fs::read(&diag_path).map_err(|e| e.to_string())?;
        outputs.push((out.stdout, file, diag));
    }
    check(outputs[1] == outputs[2], "two runs with 4 threads differ")?;
    check(outputs[0] == outputs[1], "1 thread and 4 threads differ")?;
    let doc: serde_json::Value = serde_json::from_slice(&outputs[0].1).map_err(|e| e.to_string())?;
    Ok(format!("3 runs byte-identical, {} facets", facet_lists(&doc).len()))
}

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        (
            "affinity propagation matches exhaustive optimum (50 instances, < 5 s)",
            Box::new(|| suite(ap_oracle_suite(50, 2024), Some(Duration::from_secs(5)))),
        ),
        (
            "cluster correlation matches numerical maximization (20 pairs)",
            Box::new(|| suite(cca_oracle_suite(20, 2024), None)),
        ),
        ("relevance score properties and threshold", Box::new(|| suite(relevance_suite(), None))),
        ("two cities share exactly two clean facets (< 30 s)", Box::new(two_cities)),
        ("ambiguous seed yields one facet with no fruit in top-10", Box::new(ambiguous_seed)),
        ("metric fixtures", Box::new(metric_fixtures)),
        ("deterministic output across runs and thread counts", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, criterion) in &criteria {
        match criterion() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
