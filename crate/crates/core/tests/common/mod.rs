#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facetset::planted::{generate, PlantConfig, PlantedCorpus, TopicPlant};
use tempfile::TempDir;

pub struct Workspace {
    pub dir: TempDir,
    pub corpus: PlantedCorpus,
    pub index: PathBuf,
    pub embeddings: PathBuf,
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facetset"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Writes a planted corpus and its embeddings, then indexes it with the binary.
pub fn planted_workspace(topics: &[TopicPlant]) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(topics, &PlantConfig::default());
    let text = dir.path().join("corpus.txt");
    let embeddings = dir.path().join("vectors.txt");
    let index = dir.path().join("corpus.idx");
    corpus.write_corpus(&text).unwrap();
    corpus.write_embeddings(&embeddings).unwrap();
    let out = run(&["index", "--corpus", path_str(&text), "--out", path_str(&index)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    Workspace {
        dir,
        corpus,
        index,
        embeddings,
    }
}

impl Workspace {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn expand(&self, query: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "expand",
            "--index",
            path_str(&self.index),
            "--embeddings",
            path_str(&self.embeddings),
            "--query",
            query,
        ];
        args.extend_from_slice(extra);
        run(&args)
    }
}

/// Facets from an expand JSON document as entity lists.
pub fn facet_lists(doc: &serde_json::Value) -> Vec<Vec<String>> {
    doc["facets"]
        .as_array()
        .expect("facets array")
        .iter()
        .map(|f| {
            f["entities"]
                .as_array()
                .unwrap()
                .iter()
                .map(|pair| pair[0].as_str().unwrap().to_string())
                .collect()
        })
        .collect()
}
