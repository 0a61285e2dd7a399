//! Pre-trained word vectors in the whitespace-separated text format, and
//! skip-gram embeddings composed by averaging.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use thiserror::Error;

use crate::corpus::SkipGram;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding dimension {found} does not match expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("embedding file contains no vectors")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Word → dense vector, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: HashMap<String, usize>,
    data: Vec<f64>,
    duplicates: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs. Words are lowercased;
    /// later duplicates are dropped and counted.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table: Option<Self> = None;
        for (n, (word, vector)) in pairs.into_iter().enumerate() {
            let t = table.get_or_insert_with(|| Self::empty(vector.len()));
            t.insert(word.as_ref(), &vector, n + 1)?;
        }
        table.ok_or(EmbeddingError::Empty)
    }

    fn empty(dim: usize) -> Self {
        Self {
            dim,
            words: HashMap::new(),
            data: Vec::new(),
            duplicates: 0,
        }
    }

    fn insert(&mut self, word: &str, vector: &[f64], line: usize) -> Result<(), EmbeddingError> {
        if vector.len() != self.dim || self.dim == 0 {
            return Err(EmbeddingError::Format {
                line,
                message: format!("expected {} values, found {}", self.dim, vector.len()),
            });
        }
        if let Some(bad) = vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::Format {
                line,
                message: format!("non-finite value at component {bad}"),
            });
        }
        let word = word.to_lowercase();
        if self.words.contains_key(&word) {
            self.duplicates += 1;
            return Ok(());
        }
        self.words.insert(word, self.data.len() / self.dim);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of repeated words skipped at load.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        let row = *self.words.get(word)?;
        Some(&self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }
}

/// Loads a text-format embedding file; `.gz` files are decompressed.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable, EmbeddingError> {
    let file = File::open(path)?;
    let gzipped = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gzipped {
        read_embeddings(BufReader::new(MultiGzDecoder::new(file)), expected_dim)
    } else {
        read_embeddings(BufReader::new(file), expected_dim)
    }
}

/// Parses the text format: an optional `count dim` header, then `word v1 … vd` rows.
pub fn read_embeddings<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<EmbeddingTable, EmbeddingError> {
    let mut table: Option<EmbeddingTable> = None;
    let mut header_dim = None;
    let mut declared_count = None;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if n == 0 && rest.len() == 1 {
            if let (Ok(count), Ok(dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                if dim == 0 {
                    return Err(EmbeddingError::Format {
                        line: 1,
                        message: "header declares dimension 0".into(),
                    });
                }
                declared_count = Some(count);
                header_dim = Some(dim);
                continue;
            }
        }

        let vector = rest
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EmbeddingError::Format {
                line: line_no,
                message: format!("unparseable value: {e}"),
            })?;
        let t = table.get_or_insert_with(|| EmbeddingTable::empty(header_dim.unwrap_or(vector.len())));
        t.insert(word, &vector, line_no)?;
    }
    let table = table.ok_or(EmbeddingError::Empty)?;
    if let Some(expected) = expected_dim {
        if expected != table.dim {
            return Err(EmbeddingError::Dimension {
                expected,
                found: table.dim,
            });
        }
    }
    if let Some(count) = declared_count {
        let rows = table.len() + table.duplicates;
        if count != rows {
            log::warn!("embedding header declares {count} rows, file has {rows}");
        }
    }
    if table.duplicates > 0 {
        log::warn!("{} duplicate words in embedding file; first occurrence kept", table.duplicates);
    }
    Ok(table)
}

/// Mean of the found context-word vectors of one skip-gram.
#[derive(Debug, Clone, PartialEq)]
pub struct SgEmbedding {
    pub vector: Vec<f64>,
    /// Number of context tokens found in the table.
    pub support: usize,
}

/// Averages the vectors of the skip-gram's context tokens. The slot and
/// out-of-vocabulary tokens are skipped; `None` when nothing is found.
pub fn embed_skipgram(table: &EmbeddingTable, sg: &SkipGram) -> Option<SgEmbedding> {
    let mut sum = vec![0.0; table.dim()];
    let mut support = 0;
    for token in sg.context_tokens() {
        if let Some(v) = table.get(token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            support += 1;
        }
    }
    if support == 0 {
        return None;
    }
    let inv = support as f64;
    sum.iter_mut().for_each(|s| *s /= inv);
    Some(SgEmbedding { vector: sum, support })
}
