//! Synthetic corpora with planted facets.
//!
//! Every topic owns a small context vocabulary, a handful of fixed context
//! templates and a member list. Each generated document places one member of
//! one topic inside one of that topic's templates, padded with filler words
//! outside the context window. Word vectors put each topic on its own
//! orthogonal direction plus small Gaussian noise, so the correct facet of
//! every skip-gram is known by construction.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{build_index, CorpusError, CorpusIndex, IndexConfig};
use crate::embeddings::{EmbeddingError, EmbeddingTable};

/// One planted facet: a name and its member entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPlant {
    pub name: String,
    pub members: Vec<String>,
}

impl TopicPlant {
    pub fn new(name: &str, members: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            members: members.iter().map(|m| m.to_string()).collect(),
        }
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.members.iter().any(|m| m == entity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub documents: usize,
    /// Context words per topic.
    pub context_words: usize,
    /// Distinct (left, right) templates per topic.
    pub templates: usize,
    /// Tokens on each side of the entity inside a template.
    pub half_width: usize,
    /// Filler tokens on each side of a template.
    pub padding: usize,
    pub dim: usize,
    /// Length of every topic direction.
    pub scale: f64,
    /// Noise norm relative to `scale`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            documents: 500,
            context_words: 8,
            templates: 6,
            half_width: 2,
            padding: 3,
            dim: 48,
            scale: 10.0,
            noise: 0.02,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub lines: Vec<String>,
    pub vectors: Vec<(String, Vec<f64>)>,
    pub topics: Vec<TopicPlant>,
}

impl PlantedCorpus {
    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }

    pub fn index(&self, config: &IndexConfig) -> Result<CorpusIndex, CorpusError> {
        build_index(self.text().as_bytes(), config)
    }

    pub fn embedding_table(&self) -> Result<EmbeddingTable, EmbeddingError> {
        EmbeddingTable::from_pairs(self.vectors.iter().map(|(w, v)| (w.as_str(), v.clone())))
    }

    pub fn topic(&self, name: &str) -> Option<&TopicPlant> {
        self.topics.iter().find(|t| t.name == name)
    }

    pub fn write_corpus(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.text())
    }

    /// Writes the vectors in the text format with a `count dim` header.
    pub fn write_embeddings(&self, path: &Path) -> io::Result<()> {
        let mut out = io::BufWriter::new(fs::File::create(path)?);
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        writeln!(out, "{} {}", self.vectors.len(), dim)?;
        for (word, v) in &self.vectors {
            write!(out, "{word}")?;
            for x in v {
                write!(out, " {x:.17e}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

fn context_word(topic: &str, k: usize) -> String {
    format!("{topic}_w{k}")
}

fn filler_word(k: usize) -> String {
    format!("filler_w{k}")
}

/// Generates a corpus and a matching embedding table.
pub fn generate(topics: &[TopicPlant], config: &PlantConfig) -> PlantedCorpus {
    assert!(!topics.is_empty());
    assert!(config.dim > topics.len(), "need a direction per topic plus one for fillers");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let w = config.half_width;

    let templates: Vec<Vec<(Vec<String>, Vec<String>)>> = topics
        .iter()
        .map(|t| {
            let words: Vec<String> = (0..config.context_words).map(|k| context_word(&t.name, k)).collect();
            (0..config.templates)
                .map(|_| {
                    let left = (0..w).map(|_| words.choose(&mut rng).unwrap().clone()).collect();
                    let right = (0..w).map(|_| words.choose(&mut rng).unwrap().clone()).collect();
                    (left, right)
                })
                .collect()
        })
        .collect();
    let fillers: Vec<String> = (0..20).map(filler_word).collect();

    let mut lines = Vec::with_capacity(config.documents);
    for d in 0..config.documents {
        let t = d % topics.len();
        let member = topics[t].members.choose(&mut rng).unwrap();
        let (left, right) = templates[t].choose(&mut rng).unwrap();
        let mut tokens: Vec<&str> = Vec::new();
        let pad: Vec<&String> = (0..2 * config.padding).map(|_| fillers.choose(&mut rng).unwrap()).collect();
        tokens.extend(pad[..config.padding].iter().map(|s| s.as_str()));
        tokens.extend(left.iter().map(String::as_str));
        tokens.push(member);
        tokens.extend(right.iter().map(String::as_str));
        tokens.extend(pad[config.padding..].iter().map(|s| s.as_str()));
        lines.push(tokens.join(" "));
    }

    // Orthonormal directions: one per topic, one shared by fillers.
    let gaussian = Normal::new(0.0, 1.0).unwrap();
    let raw = DMatrix::from_fn(config.dim, topics.len() + 1, |_, _| gaussian.sample(&mut rng));
    let q = raw.qr().q();
    let direction = |i: usize| -> Vec<f64> { q.column(i).iter().map(|x| x * config.scale).collect() };
    let noise_sd = config.noise * config.scale / (config.dim as f64).sqrt();
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let jitter = |base: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        base.iter().map(|x| x + noise.sample(rng)).collect()
    };

    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, t) in topics.iter().enumerate() {
        let dir = direction(i);
        for k in 0..config.context_words {
            vectors.insert(context_word(&t.name, k), jitter(&dir, &mut rng));
        }
        for m in &t.members {
            if !vectors.contains_key(m) {
                let v = jitter(&dir, &mut rng);
                vectors.insert(m.clone(), v);
            }
        }
    }
    let filler_dir = direction(topics.len());
    for f in &fillers {
        let v = jitter(&filler_dir, &mut rng);
        vectors.insert(f.clone(), v);
    }
    PlantedCorpus {
        lines,
        vectors: vectors.into_iter().collect(),
        topics: topics.to_vec(),
    }
}

/// Two cities sharing a capital facet and an Olympic-host facet, each with a
/// private regional facet.
pub fn beijing_london() -> Vec<TopicPlant> {
    vec![
        TopicPlant::new(
            "capital",
            &["beijing", "london", "paris", "moscow", "berlin", "madrid", "cairo", "ottawa", "lima", "oslo"],
        ),
        TopicPlant::new(
            "olympic",
            &["beijing", "london", "athens", "sydney", "atlanta", "barcelona", "seoul", "montreal", "helsinki", "munich"],
        ),
        TopicPlant::new(
            "chinacity",
            &["beijing", "shanghai", "shenzhen", "guangzhou", "chengdu", "wuhan", "nanjing", "tianjin", "xian"],
        ),
        TopicPlant::new(
            "ukcity",
            &["london", "manchester", "liverpool", "leeds", "bristol", "glasgow", "sheffield", "cardiff", "belfast"],
        ),
    ]
}

/// An ambiguous seed with a fruit sense next to a seed that only shares the company sense.
pub fn apple_amazon() -> Vec<TopicPlant> {
    vec![
        TopicPlant::new(
            "fruit",
            &["apple", "banana", "mango", "cherry", "peach", "grape", "plum", "pear", "lemon", "kiwi"],
        ),
        TopicPlant::new(
            "company",
            &[
                "apple", "amazon", "google", "microsoft", "intel", "ibm", "oracle", "netflix", "adobe", "cisco",
                "nvidia", "samsung",
            ],
        ),
        TopicPlant::new(
            "river",
            &["amazon", "nile", "danube", "yangtze", "mekong", "congo", "volga", "thames", "rhine"],
        ),
    ]
}

/// Two seeds whose only shared sense is fruit.
pub fn apple_orange() -> Vec<TopicPlant> {
    vec![
        TopicPlant::new(
            "fruit",
            &["apple", "orange", "banana", "mango", "cherry", "peach", "grape", "plum", "pear", "kiwi"],
        ),
        TopicPlant::new(
            "company",
            &["apple", "google", "microsoft", "intel", "ibm", "netflix", "adobe", "cisco", "nvidia"],
        ),
        TopicPlant::new(
            "color",
            &["orange", "red", "green", "blue", "purple", "yellow", "violet", "crimson", "teal"],
        ),
    ]
}

/// A seed with a mythology sense and a space-program sense.
pub fn poseidon() -> Vec<TopicPlant> {
    vec![
        TopicPlant::new(
            "mythology",
            &["poseidon", "zeus", "hera", "athena", "apollo", "hermes", "ares", "hades", "artemis"],
        ),
        TopicPlant::new(
            "spaceprogram",
            &["poseidon", "gemini", "mercury", "artemis", "voyager", "pioneer", "galileo", "juno", "cassini"],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = generate(&poseidon(), &PlantConfig::default());
        let b = generate(&poseidon(), &PlantConfig::default());
        assert_eq!(a.lines, b.lines);
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn documents_follow_templates() {
        let cfg = PlantConfig {
            documents: 40,
            ..PlantConfig::default()
        };
        let corpus = generate(&beijing_london(), &cfg);
        assert_eq!(corpus.lines.len(), 40);
        for line in &corpus.lines {
            let tokens: Vec<&str> = line.split(' ').collect();
            assert_eq!(tokens.len(), 2 * cfg.padding + 2 * cfg.half_width + 1);
        }
        let table = corpus.embedding_table().unwrap();
        assert_eq!(table.dim(), cfg.dim);
        assert!(table.contains("capital_w0"));
        assert!(table.contains("filler_w3"));
    }
}
