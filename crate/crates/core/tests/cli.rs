mod common;

use std::fs;

use common::{facet_lists, path_str, planted_workspace, run};
use facetset::planted::{apple_amazon, beijing_london, poseidon, TopicPlant};
use serde_json::{json, Value};

fn stdout_json(out: &std::process::Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn index_rebuild_is_byte_identical() {
    let ws = planted_workspace(&poseidon());
    let again = ws.path("again.idx");
    let out = run(&[
        "index",
        "--corpus",
        path_str(&ws.path("corpus.txt")),
        "--out",
        path_str(&again),
        "--json",
    ]);
    let summary = stdout_json(&out);
    assert!(summary["entities"].as_u64().unwrap() > 0);
    assert_eq!(fs::read(&ws.index).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = run(&["index", "--corpus", path_str(&missing), "--out", path_str(&dir.path().join("x.idx"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
}

#[test]
fn expand_two_cities() {
    let ws = planted_workspace(&beijing_london());
    let doc = stdout_json(&ws.expand("beijing,london", &["--json", "--query-id", "q7"]));
    assert_eq!(doc["query_id"], "q7");
    assert_eq!(doc["scorer"], "corpus");
    let facets = facet_lists(&doc);
    assert_eq!(facets.len(), 2);
    let capital = ws.corpus.topic("capital").unwrap();
    let olympic = ws.corpus.topic("olympic").unwrap();
    for f in &facets {
        let top: Vec<&String> = f.iter().take(5).collect();
        assert!(
            top.iter().all(|e| capital.contains(e)) || top.iter().all(|e| olympic.contains(e)),
            "{top:?}"
        );
    }
    let human = ws.expand("beijing,london", &[]);
    assert!(String::from_utf8_lossy(&human.stdout).contains("facet 1"));
}

#[test]
fn unknown_seed_exits_3() {
    let ws = planted_workspace(&poseidon());
    let out = ws.expand("poseidon,kraken", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kraken"));
}

#[test]
fn no_shared_facet_exits_4_with_diagnostics() {
    let ws = planted_workspace(&beijing_london());
    let diag = ws.path("diag.json");
    let out = ws.expand("shanghai,cardiff", &["--diagnostics", path_str(&diag)]);
    assert_eq!(out.status.code(), Some(4));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&diag).unwrap()).unwrap();
    assert!(doc["error"].is_string());
    assert!(!doc["fusion"]["steps"].as_array().unwrap().is_empty());
}

#[test]
fn single_seed_single_topic() {
    let topics = vec![TopicPlant::new("planet", &["mars", "venus", "saturn", "jupiter", "neptune", "uranus"])];
    let ws = planted_workspace(&topics);
    let doc = stdout_json(&ws.expand("mars", &["--json"]));
    assert_eq!(facet_lists(&doc).len(), 1);
}

#[test]
fn batch_records_per_query_errors() {
    let ws = planted_workspace(&apple_amazon());
    let queries = ws.path("queries.json");
    fs::write(
        &queries,
        json!([
            {"query_id": "a", "seeds": ["apple", "amazon"]},
            {"query_id": "b", "seeds": ["apple", "unicorn"]}
        ])
        .to_string(),
    )
    .unwrap();
    let out = run(&[
        "expand",
        "--index",
        path_str(&ws.index),
        "--embeddings",
        path_str(&ws.embeddings),
        "--queries",
        path_str(&queries),
        "--json",
    ]);
    let doc = stdout_json(&out);
    let items = doc.as_array().unwrap();
    assert_eq!(items.len(), 2);
    assert_eq!(facet_lists(&items[0]).len(), 1);
    assert!(items[1]["error"].as_str().unwrap().contains("unicorn"));
}

#[test]
fn config_file_and_flag_precedence() {
    let ws = planted_workspace(&poseidon());
    let cfg = ws.path("run.toml");
    fs::write(&cfg, "n = 3\n").unwrap();
    let from_file = stdout_json(&ws.expand("poseidon", &["--json", "--config", path_str(&cfg)]));
    assert!(facet_lists(&from_file).iter().all(|f| f.len() == 3));
    assert_eq!(from_file["config"]["n"], 3);
    let overridden = stdout_json(&ws.expand("poseidon", &["--json", "--config", path_str(&cfg), "--n", "4"]));
    assert!(facet_lists(&overridden).iter().all(|f| f.len() == 4));

    fs::write(&cfg, "n = 3\nbogus_key = 1\n").unwrap();
    let out = ws.expand("poseidon", &["--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn mlm_scorer_without_sidecar_exits_6() {
    let ws = planted_workspace(&poseidon());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("tcp://127.0.0.1:{port}");
    let out = ws.expand("poseidon", &["--scorer", "mlm", "--sidecar", &addr]);
    assert_eq!(out.status.code(), Some(6));
}

fn write(dir: &std::path::Path, name: &str, value: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, value.to_string()).unwrap();
    p
}

fn eval(pred: &std::path::Path, gold: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["eval", "--pred", path_str(pred), "--gold", path_str(gold)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn eval_fixture_values() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(
        dir.path(),
        "gold.json",
        &json!([{"query_id": "q1", "seeds": ["s"], "facets": [["a", "b", "c", "d", "e"], ["f", "g"]]}]),
    );
    let pred = write(
        dir.path(),
        "pred.json",
        &json!({"query_id": "q1", "query": ["s"], "facets": [
            {"id": 0, "entities": [["a", 1.0], ["b", 0.9], ["c", 0.8], ["d", 0.7], ["e", 0.6]]},
            {"id": 1, "entities": [["f", 1.0], ["x", 0.9], ["y", 0.8], ["z", 0.7], ["w", 0.6]]}
        ]}),
    );
    // Facet 1: AP 1. Facet 2: one hit at rank 1 over min(5, 2) = 2, AP 0.5.
    let doc = stdout_json(&eval(&pred, &gold, &["--json", "--cutoffs", "5"]));
    let mmap = doc["cutoffs"][0]["mmap"].as_f64().unwrap();
    assert!((mmap - 0.75).abs() < 1e-9, "{mmap}");
    let table = eval(&pred, &gold, &[]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("MMAP@5"));

    let perfect = write(
        dir.path(),
        "perfect.json",
        &json!({"query_id": "q1", "query": ["s"], "facets": [
            {"entities": [["a", 1.0], ["b", 1.0], ["c", 1.0], ["d", 1.0], ["e", 1.0]]},
            {"entities": [["f", 1.0], ["g", 1.0]]}
        ]}),
    );
    let doc = stdout_json(&eval(&perfect, &gold, &["--json"]));
    for c in doc["cutoffs"].as_array().unwrap() {
        assert_eq!(c["bmap"].as_f64().unwrap(), 1.0);
    }

    let empty = write(dir.path(), "empty.json", &json!({"query_id": "q1", "query": ["s"], "facets": []}));
    let doc = stdout_json(&eval(&empty, &gold, &["--json"]));
    assert_eq!(doc["cutoffs"][0]["mmap"].as_f64().unwrap(), 0.0);
}

#[test]
fn eval_schema_violation_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(
        dir.path(),
        "gold.json",
        &json!([{"query_id": "q1", "seeds": ["s"], "facets": [["a"], []]}]),
    );
    let pred = write(dir.path(), "pred.json", &json!({"query": ["s"], "facets": []}));
    let out = eval(&pred, &gold, &[]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/0/facets/1"));
}

#[test]
fn version_and_selftest() {
    let out = run(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("index format 1"));
    let out = run(&["selftest", "--json"]);
    let doc = stdout_json(&out);
    assert_eq!(doc.as_array().unwrap().len(), 3);
}
