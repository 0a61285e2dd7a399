use std::collections::BTreeSet;

use facetset::clustering::{
    affinity_propagation, build_similarity, cluster_seed, ApParams, ClusterConfig, Metric, SimilarityGraph,
};
use facetset::corpus::{build_index, IndexConfig};
use facetset::embeddings::EmbeddingTable;
use facetset::oracle;
use facetset::planted::{apple_amazon, generate, poseidon, PlantConfig, PlantedCorpus};
use facetset::selftest::ap_instance;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Topic of a skip-gram, read off its planted context words.
fn topic_of(canonical: &str) -> BTreeSet<String> {
    canonical
        .split(' ')
        .filter_map(|t| t.split_once("_w").map(|(topic, _)| topic.to_string()))
        .filter(|t| t != "filler")
        .collect()
}

fn clusters_for(corpus: &PlantedCorpus, seed: &str) -> Vec<BTreeSet<String>> {
    let index = corpus.index(&IndexConfig::default()).unwrap();
    let table = corpus.embedding_table().unwrap();
    let result = cluster_seed(&index, &table, seed, &ClusterConfig::default()).unwrap();
    assert!(result.converged);
    result
        .clusters
        .iter()
        .map(|c| {
            let topics: BTreeSet<String> = c.members.iter().flat_map(|m| topic_of(&m.skipgram.canonical())).collect();
            // Purity 1: each member belongs to exactly one planted topic, shared by the whole cluster.
            for m in &c.members {
                assert_eq!(topic_of(&m.skipgram.canonical()).len(), 1, "{}", m.skipgram);
            }
            topics
        })
        .collect()
}

#[test]
fn apple_splits_into_fruit_and_company() {
    let corpus = generate(&apple_amazon(), &PlantConfig::default());
    let clusters = clusters_for(&corpus, "apple");
    assert_eq!(clusters.len(), 2);
    let all: BTreeSet<String> = clusters.iter().flatten().cloned().collect();
    assert_eq!(all, ["company".to_string(), "fruit".to_string()].into());
    assert!(clusters.iter().all(|c| c.len() == 1));
}

#[test]
fn poseidon_has_two_senses() {
    let corpus = generate(&poseidon(), &PlantConfig::default());
    let clusters = clusters_for(&corpus, "poseidon");
    assert_eq!(clusters.len(), 2);
    assert!(clusters.iter().all(|c| c.len() == 1));
}

#[test]
fn single_context_seed_is_one_cluster() {
    let text = "alpha beta gamma delta\nx y z\nx y z\n";
    let cfg = IndexConfig {
        min_freq: 1,
        stop_words: BTreeSet::new(),
        ..IndexConfig::default()
    };
    let index = build_index(text.as_bytes(), &cfg).unwrap();
    let table = EmbeddingTable::from_pairs([("alpha", vec![1.0, 0.0]), ("beta", vec![0.0, 1.0])]).unwrap();
    let result = cluster_seed(&index, &table, "gamma", &ClusterConfig::default()).unwrap();
    assert_eq!(result.clusters.len(), 1);
    assert_eq!(result.clusters[0].members.len(), 1);
    assert_eq!(result.clusters[0].members[0].skipgram.canonical(), "alpha beta __ delta");
}

#[test]
fn seeded_instances_reach_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..100u64 {
        let points = ap_instance(&mut rng);
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let g = build_similarity(&refs, Metric::NegSqEuclidean, -60.0).unwrap();
        let res = affinity_propagation(&g.with_tie_noise(case), &ApParams::default());
        assert!(res.converged);
        let (_, optima) = oracle::best_exemplar_sets(&g.rows(), -60.0, 1e-6);
        assert!(optima.contains(&res.exemplars), "instance {case}: {:?}", res.exemplars);
    }
}

#[test]
fn raising_preference_never_loses_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for case in 0..40u64 {
        let points = ap_instance(&mut rng);
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let mut g = build_similarity(&refs, Metric::NegSqEuclidean, 0.0).unwrap();
        let mut last: Option<usize> = None;
        for p in [-400.0, -150.0, -60.0, -20.0, -5.0, -1.0] {
            g.set_preference(p);
            let res = affinity_propagation(&g.with_tie_noise(case), &ApParams::default());
            if !res.converged {
                continue;
            }
            if let Some(prev) = last {
                assert!(res.cluster_count() >= prev, "instance {case} at preference {p}");
            }
            last = Some(res.cluster_count());
            checked += 1;
        }
    }
    assert!(checked > 200);
}

fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..25)
}

proptest! {
    #[test]
    fn assignment_is_a_partition(pts in points(), pref in -200.0f64..-0.5, seed in 0u64..1000) {
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let g = build_similarity(&refs, Metric::NegSqEuclidean, pref).unwrap();
        let res = affinity_propagation(&g.with_tie_noise(seed), &ApParams::default());
        prop_assert_eq!(res.assignment.len(), pts.len());
        prop_assert!(!res.exemplars.is_empty());
        for &e in &res.exemplars {
            prop_assert_eq!(res.assignment[e], e);
        }
        for &a in &res.assignment {
            prop_assert!(res.exemplars.contains(&a));
        }
    }

    #[test]
    fn graph_diagonal_and_symmetry(pts in points(), pref in -100.0f64..0.0) {
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let g: SimilarityGraph = build_similarity(&refs, Metric::NegSqEuclidean, pref).unwrap();
        for i in 0..g.len() {
            prop_assert_eq!(g.get(i, i), pref);
            for k in 0..g.len() {
                prop_assert_eq!(g.get(i, k), g.get(k, i));
                prop_assert!(g.get(i, k).is_finite());
            }
        }
        let c = build_similarity(&refs, Metric::Cosine, pref);
        if let Ok(c) = c {
            for i in 0..c.len() {
                for k in 0..c.len() {
                    if i != k {
                        prop_assert!((-1.0..=1.0).contains(&c.get(i, k)));
                    }
                }
            }
        }
    }
}
