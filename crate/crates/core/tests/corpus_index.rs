use std::collections::{BTreeMap, BTreeSet};

use facetset::corpus::{build_index, tokenize, CorpusIndex, IndexConfig, SkipGram, SLOT};
use proptest::prelude::*;

fn config(window: usize, min_freq: u64) -> IndexConfig {
    IndexConfig {
        window,
        min_freq,
        ..IndexConfig::default()
    }
}

/// Every (left, right) context of `entity`, found by scanning the raw text.
fn scan_contexts(text: &str, entity: &str, window: usize) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let tokens = tokenize(line);
        for (i, t) in tokens.iter().enumerate() {
            if t != entity {
                continue;
            }
            let left = &tokens[i.saturating_sub(window)..i];
            let right = &tokens[i + 1..(i + 1 + window).min(tokens.len())];
            if left.is_empty() && right.is_empty() {
                continue;
            }
            let mut parts: Vec<&str> = left.iter().map(String::as_str).collect();
            parts.push(SLOT);
            parts.extend(right.iter().map(String::as_str));
            *out.entry(parts.join(" ")).or_insert(0) += 1;
        }
    }
    out
}

fn paris_corpus() -> String {
    let lines = [
        "the museum in paris opened late",
        "we flew from rome to madrid",
        "paris hosted the summit",
        "a train to paris left early",
        "nobody mentioned the city",
        "tourists crowd paris every summer",
        "berlin and vienna traded goods",
        "the treaty of paris was signed",
        "fog covered london again",
        "rain in lisbon today",
        "we love paris",
        "cafes of rome stay open",
        "prague bridges at night",
        "paris",
        "markets in oslo close early",
        "students moved to paris for school",
        "the alps near geneva",
        "flights to dublin were cancelled",
        "news from athens arrived",
        "museums in madrid are free",
    ];
    lines.join("\n")
}

#[test]
fn paris_counts_match_linear_scan() {
    let text = paris_corpus();
    assert_eq!(text.lines().count(), 20);
    let scanned = scan_contexts(&text, "paris", 2);
    let expected: u64 = scanned.values().sum();
    assert_eq!(expected, 7);

    let index = build_index(text.as_bytes(), &config(2, 1)).unwrap();
    let id = index.entity_id("paris").unwrap();
    let row_total: u64 = index.entity_row(id).iter().map(|p| p.1).sum();
    assert_eq!(row_total, expected);
    let column_total: u64 = (0..index.skipgram_len())
        .flat_map(|sg| index.skipgram_column(facetset::corpus::SkipGramId(sg as u32)).to_vec())
        .filter(|(e, _)| *e == id)
        .map(|(_, n)| n)
        .sum();
    assert_eq!(column_total, expected);

    let from_index: BTreeMap<String, u64> = index
        .get_skipgrams("paris")
        .unwrap()
        .into_iter()
        .map(|(sg, n)| (sg.canonical(), n))
        .collect();
    assert_eq!(from_index, scanned);
}

#[test]
fn apple_has_ten_distinct_contexts() {
    let fruit = [
        "i ate an apple with lunch",
        "she peeled the apple slowly",
        "a ripe apple pie recipe",
        "juice from apple and pear",
        "picked one apple off trees",
    ];
    let company = [
        "shares of apple rose sharply",
        "the ceo said apple will hire",
        "analysts expect apple earnings beat",
        "investors bought apple stock today",
        "rivals sued apple over patents",
    ];
    let mut lines: Vec<&str> = Vec::new();
    for _ in 0..2 {
        lines.extend(fruit);
        lines.extend(company);
    }
    let text = lines.join("\n");
    let scanned = scan_contexts(&text, "apple", 2);
    assert_eq!(scanned.len(), 10);

    let index = build_index(text.as_bytes(), &config(2, 1)).unwrap();
    let got = index.get_skipgrams("apple").unwrap();
    assert_eq!(got.len(), 10);
    assert!(got.iter().all(|(_, n)| *n == 2));
    let names: BTreeSet<String> = got.iter().map(|(sg, _)| sg.canonical()).collect();
    assert_eq!(names, scanned.keys().cloned().collect());
}

#[test]
fn rebuild_is_byte_identical() {
    let text = paris_corpus();
    let a = build_index(text.as_bytes(), &config(2, 1)).unwrap();
    let b = build_index(text.as_bytes(), &config(2, 1)).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(CorpusIndex::from_bytes(&a.to_bytes()).unwrap(), a);
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(0u8..12, 1..12), 1..25)
}

fn render(docs: &[Vec<u8>]) -> String {
    docs.iter()
        .map(|d| d.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

proptest! {
    #[test]
    fn index_is_its_own_transpose(docs in corpus_strategy(), window in 1usize..4, min_freq in 1u64..3) {
        let index = build_index(render(&docs).as_bytes(), &config(window, min_freq)).unwrap();
        let (forward, backward) = index.total_counts();
        prop_assert_eq!(forward, backward);
        for (e, _) in index.entities() {
            for &(sg, n) in index.entity_row(e) {
                let back = index.skipgram_column(sg).iter().find(|p| p.0 == e).map(|p| p.1);
                prop_assert_eq!(back, Some(n));
            }
        }
    }

    #[test]
    fn contexts_reconstruct_document_windows(docs in corpus_strategy(), window in 1usize..4) {
        let text = render(&docs);
        let index = build_index(text.as_bytes(), &config(window, 1)).unwrap();
        let documents: Vec<Vec<String>> = text.lines().map(tokenize).collect();
        for (_, entity) in index.entities() {
            for (sg, _) in index.get_skipgrams(entity).unwrap() {
                let filled: Vec<&str> = sg.fill(entity);
                let found = documents.iter().any(|d| {
                    d.windows(filled.len()).any(|w| w.iter().map(String::as_str).eq(filled.iter().copied()))
                });
                prop_assert!(found, "{} with {} not found", sg.canonical(), entity);
            }
        }
    }

    #[test]
    fn build_is_deterministic_and_round_trips(docs in corpus_strategy()) {
        let text = render(&docs);
        let a = build_index(text.as_bytes(), &config(2, 1)).unwrap();
        let b = build_index(text.as_bytes(), &config(2, 1)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(CorpusIndex::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn contexts_sorted_by_count_then_canonical(docs in corpus_strategy()) {
        let index = build_index(render(&docs).as_bytes(), &config(1, 1)).unwrap();
        for (_, entity) in index.entities() {
            let list = index.get_skipgrams(entity).unwrap();
            for pair in list.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                prop_assert!(a.1 > b.1 || (a.1 == b.1 && a.0.canonical() < b.0.canonical()));
            }
        }
    }
}

#[test]
fn skipgram_canonical_form() {
    let sg = SkipGram::new(vec!["capital".into(), "of".into()], vec![]);
    assert_eq!(sg.canonical(), "capital of __");
}
