//! Corpus ingestion, skip-gram extraction and the entity/skip-gram inverted index.
//!
//! A skip-gram is the window of up to `W` tokens on each side of an entity
//! occurrence, with the entity itself replaced by [`SLOT`]. The index keeps
//! both directions of the entity/skip-gram relation with occurrence counts.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slot marker used in the canonical string form of a skip-gram.
pub const SLOT: &str = "__";

/// Magic bytes opening every index file.
pub const INDEX_MAGIC: [u8; 8] = *b"FSETIDX\0";
/// Current on-disk index format version.
pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Documents per shard during a parallel build. Fixed so that the shard
/// layout never depends on the thread count.
const SHARD_SIZE: usize = 2048;

const DEFAULT_STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "he", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "this", "to", "was", "were", "will", "with",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("failed to read corpus at line {line}: {source}")]
    Read { line: usize, source: io::Error },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("incompatible index file: {0}")]
    IncompatibleIndex(String),
    #[error("index checksum error: {0}")]
    Checksum(String),
    #[error("malformed skip-gram `{0}`")]
    MalformedSkipGram(String),
    #[error("invalid index configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkipGramId(pub u32);

/// One line of the corpus after tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: u64,
    pub tokens: Vec<String>,
}

/// Lowercases and splits on anything that is not alphanumeric or `_`.
///
/// Underscore-joined multiword entities (`new_york`) survive as one token.
/// Leading and trailing underscores are trimmed, so no token can collide
/// with the slot marker.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .map(|t| t.trim_matches('_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The tokens surrounding one entity occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkipGram {
    pub left: Vec<String>,
    pub right: Vec<String>,
}

impl SkipGram {
    pub fn new(left: Vec<String>, right: Vec<String>) -> Self {
        debug_assert!(!left.is_empty() || !right.is_empty());
        Self { left, right }
    }

    /// Parses the canonical `"left tokens __ right tokens"` form.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let slots: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == SLOT)
            .map(|(i, _)| i)
            .collect();
        if slots.len() != 1 || tokens.len() < 2 {
            return Err(CorpusError::MalformedSkipGram(text.to_string()));
        }
        let at = slots[0];
        Ok(Self {
            left: tokens[..at].iter().map(|t| t.to_string()).collect(),
            right: tokens[at + 1..].iter().map(|t| t.to_string()).collect(),
        })
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }

    /// Context tokens in reading order, slot excluded.
    pub fn context_tokens(&self) -> impl Iterator<Item = &str> {
        self.left.iter().chain(self.right.iter()).map(String::as_str)
    }

    /// The token window with `entity` substituted into the slot.
    pub fn fill<'a>(&'a self, entity: &'a str) -> Vec<&'a str> {
        self.left
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(entity))
            .chain(self.right.iter().map(String::as_str))
            .collect()
    }
}

impl fmt::Display for SkipGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.left {
            write!(f, "{t} ")?;
        }
        f.write_str(SLOT)?;
        for t in &self.right {
            write!(f, " {t}")?;
        }
        Ok(())
    }
}

/// Whether a repeated (entity, skip-gram) pair inside one document counts once
/// or once per occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    #[default]
    PerOccurrence,
    PerDocument,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexConfig {
    /// Context half-width.
    pub window: usize,
    /// Minimum corpus frequency for a token to become an entity.
    pub min_freq: u64,
    pub count_mode: CountMode,
    pub stop_words: BTreeSet<String>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            window: 2,
            min_freq: 3,
            count_mode: CountMode::PerOccurrence,
            stop_words: default_stop_words(),
        }
    }
}

pub fn default_stop_words() -> BTreeSet<String> {
    DEFAULT_STOP_WORDS.iter().map(|s| s.to_string()).collect()
}

/// Reads a stop-word list, one token per line. Blank lines and `#` comments are ignored.
pub fn read_stop_words(path: &Path) -> Result<BTreeSet<String>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut words = BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        let word = line.trim();
        if !word.is_empty() && !word.starts_with('#') {
            words.insert(word.to_lowercase());
        }
    }
    Ok(words)
}

impl IndexConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.window == 0 {
            return Err(CorpusError::InvalidConfig("window must be >= 1".into()));
        }
        if self.min_freq == 0 {
            return Err(CorpusError::InvalidConfig("min_freq must be >= 1".into()));
        }
        Ok(())
    }
}

/// Reads one document per line. Lines that tokenize to nothing are skipped.
pub fn read_documents<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Read { line: n + 1, source })?;
        let tokens = tokenize(&line);
        if !tokens.is_empty() {
            docs.push(Document {
                id: n as u64,
                tokens,
            });
        }
    }
    Ok(docs)
}

/// Builds the index from a stream of raw text lines, one document per line.
pub fn build_index<R: BufRead>(reader: R, config: &IndexConfig) -> Result<CorpusIndex, CorpusError> {
    let docs = read_documents(reader)?;
    build_from_documents(&docs, config, SHARD_SIZE)
}

/// Builds the index from tokenized documents, counting `shard_size` documents
/// per partial index before merging. The result does not depend on `shard_size`.
pub fn build_from_documents(
    docs: &[Document],
    config: &IndexConfig,
    shard_size: usize,
) -> Result<CorpusIndex, CorpusError> {
    config.validate()?;
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let shard_size = shard_size.max(1);

    let frequencies = docs
        .par_chunks(shard_size)
        .map(|shard| {
            let mut freq: HashMap<&str, u64> = HashMap::new();
            for doc in shard {
                for t in &doc.tokens {
                    *freq.entry(t.as_str()).or_default() += 1;
                }
            }
            freq
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });

    let mut entities: Vec<(&str, u64)> = frequencies
        .into_iter()
        .filter(|&(_, f)| f >= config.min_freq)
        .collect();
    entities.sort_unstable();
    let entity_ids: HashMap<&str, u32> = entities
        .iter()
        .enumerate()
        .map(|(i, (e, _))| (*e, i as u32))
        .collect();

    let pairs = docs
        .par_chunks(shard_size)
        .map(|shard| {
            let mut counts: HashMap<(u32, SkipGram), u64> = HashMap::new();
            for doc in shard {
                let mut seen = HashSet::new();
                for (pos, token) in doc.tokens.iter().enumerate() {
                    let Some(&eid) = entity_ids.get(token.as_str()) else {
                        continue;
                    };
                    let Some(sg) = extract_skipgram(&doc.tokens, pos, config.window) else {
                        continue;
                    };
                    if config.count_mode == CountMode::PerDocument && !seen.insert((eid, sg.clone())) {
                        continue;
                    }
                    *counts.entry((eid, sg)).or_default() += 1;
                }
            }
            counts
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });

    let mut skipgrams: Vec<(String, SkipGram)> = pairs
        .keys()
        .map(|(_, sg)| sg)
        .collect::<HashSet<_>>()
        .into_iter()
        .map(|sg| (sg.canonical(), sg.clone()))
        .collect();
    skipgrams.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let sg_ids: HashMap<&SkipGram, u32> = skipgrams
        .iter()
        .enumerate()
        .map(|(i, (_, sg))| (sg, i as u32))
        .collect();

    let mut entity_to_sg = vec![Vec::new(); entities.len()];
    for ((eid, sg), count) in &pairs {
        entity_to_sg[*eid as usize].push((SkipGramId(sg_ids[sg]), *count));
    }
    for row in &mut entity_to_sg {
        row.sort_unstable();
    }

    let stop_only = skipgrams
        .iter()
        .map(|(_, sg)| sg.context_tokens().all(|t| config.stop_words.contains(t)))
        .collect();

    Ok(CorpusIndex::assemble(
        IndexMeta {
            window: config.window,
            min_freq: config.min_freq,
            count_mode: config.count_mode,
            stop_words: config.stop_words.iter().cloned().collect(),
        },
        entities.into_iter().map(|(e, f)| (e.to_string(), f)).collect(),
        skipgrams.into_iter().map(|(_, sg)| sg).collect(),
        stop_only,
        entity_to_sg,
    ))
}

/// The context of `tokens[pos]`, truncated at document boundaries.
/// Returns `None` for a single-token document.
pub fn extract_skipgram(tokens: &[String], pos: usize, window: usize) -> Option<SkipGram> {
    let left = tokens[pos.saturating_sub(window)..pos].to_vec();
    let right = tokens[pos + 1..(pos + 1 + window).min(tokens.len())].to_vec();
    if left.is_empty() && right.is_empty() {
        None
    } else {
        Some(SkipGram { left, right })
    }
}

/// Build parameters recorded inside the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexMeta {
    pub window: usize,
    pub min_freq: u64,
    pub count_mode: CountMode,
    pub stop_words: Vec<String>,
}

/// Immutable inverted index between entities and skip-gram contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    meta: IndexMeta,
    entities: Vec<String>,
    frequencies: Vec<u64>,
    skipgrams: Vec<SkipGram>,
    stop_only: Vec<bool>,
    entity_to_sg: Vec<Vec<(SkipGramId, u64)>>,
    sg_to_entity: Vec<Vec<(EntityId, u64)>>,
    entity_lookup: HashMap<String, EntityId>,
    sg_lookup: HashMap<String, SkipGramId>,
}

impl CorpusIndex {
    fn assemble(
        meta: IndexMeta,
        vocab: Vec<(String, u64)>,
        skipgrams: Vec<SkipGram>,
        stop_only: Vec<bool>,
        entity_to_sg: Vec<Vec<(SkipGramId, u64)>>,
    ) -> Self {
        let mut sg_to_entity = vec![Vec::new(); skipgrams.len()];
        for (eid, row) in entity_to_sg.iter().enumerate() {
            for &(sg, count) in row {
                sg_to_entity[sg.0 as usize].push((EntityId(eid as u32), count));
            }
        }
        let (entities, frequencies): (Vec<String>, Vec<u64>) = vocab.into_iter().unzip();
        let entity_lookup = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), EntityId(i as u32)))
            .collect();
        let sg_lookup = skipgrams
            .iter()
            .enumerate()
            .map(|(i, sg)| (sg.canonical(), SkipGramId(i as u32)))
            .collect();
        Self {
            meta,
            entities,
            frequencies,
            skipgrams,
            stop_only,
            entity_to_sg,
            sg_to_entity,
            entity_lookup,
            sg_lookup,
        }
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn vocab_len(&self) -> usize {
        self.entities.len()
    }

    pub fn skipgram_len(&self) -> usize {
        self.skipgrams.len()
    }

    pub fn entity_id(&self, entity: &str) -> Option<EntityId> {
        self.entity_lookup.get(entity).copied()
    }

    pub fn entity(&self, id: EntityId) -> &str {
        &self.entities[id.0 as usize]
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityId, &str)> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, e)| (EntityId(i as u32), e.as_str()))
    }

    /// Corpus frequency, or 0 for tokens outside the entity vocabulary.
    pub fn frequency(&self, entity: &str) -> u64 {
        self.entity_id(entity)
            .map_or(0, |id| self.frequencies[id.0 as usize])
    }

    pub fn skipgram(&self, id: SkipGramId) -> &SkipGram {
        &self.skipgrams[id.0 as usize]
    }

    pub fn skipgram_id(&self, canonical: &str) -> Option<SkipGramId> {
        self.sg_lookup.get(canonical).copied()
    }

    /// True when every context token of the skip-gram is a stop word.
    pub fn is_stop_only(&self, id: SkipGramId) -> bool {
        self.stop_only[id.0 as usize]
    }

    /// Raw `(skip-gram, count)` row of an entity, ordered by skip-gram id.
    pub fn entity_row(&self, id: EntityId) -> &[(SkipGramId, u64)] {
        &self.entity_to_sg[id.0 as usize]
    }

    /// Raw `(entity, count)` column of a skip-gram, ordered by entity id.
    pub fn skipgram_column(&self, id: SkipGramId) -> &[(EntityId, u64)] {
        &self.sg_to_entity[id.0 as usize]
    }

    /// All contexts of `entity` by descending count, ties by canonical form.
    pub fn contexts(&self, entity: &str) -> Result<Vec<(SkipGramId, u64)>, CorpusError> {
        let id = self
            .entity_id(entity)
            .ok_or_else(|| CorpusError::UnknownEntity(entity.to_string()))?;
        let mut row = self.entity_row(id).to_vec();
        // Skip-gram ids are assigned in canonical order, so id order is the tie-break.
        row.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(row)
    }

    pub fn get_skipgrams(&self, entity: &str) -> Result<Vec<(&SkipGram, u64)>, CorpusError> {
        Ok(self
            .contexts(entity)?
            .into_iter()
            .map(|(id, c)| (self.skipgram(id), c))
            .collect())
    }

    /// Σ counts over `entity_to_sg` and over `sg_to_entity`.
    pub fn total_counts(&self) -> (u64, u64) {
        let forward = self.entity_to_sg.iter().flatten().map(|p| p.1).sum();
        let backward = self.sg_to_entity.iter().flatten().map(|p| p.1).sum();
        (forward, backward)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Canonical serialization: magic, version, payload length, payload, CRC-32 of payload.
    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let payload = self.encode_payload();
        out.write_all(&INDEX_MAGIC)?;
        out.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(payload.len() as u64).to_le_bytes())?;
        out.write_all(&payload)?;
        out.write_all(&crc32fast::hash(&payload).to_le_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        const HEADER: usize = 8 + 4 + 8;
        if bytes.len() < INDEX_MAGIC.len() || bytes[..INDEX_MAGIC.len()] != INDEX_MAGIC {
            return Err(CorpusError::IncompatibleIndex("bad magic bytes".into()));
        }
        if bytes.len() < HEADER {
            return Err(CorpusError::Checksum("truncated header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != INDEX_FORMAT_VERSION {
            return Err(CorpusError::IncompatibleIndex(format!(
                "format version {version}, expected {INDEX_FORMAT_VERSION}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let Some(end) = HEADER.checked_add(len).filter(|e| e + 4 <= bytes.len()) else {
            return Err(CorpusError::Checksum(format!(
                "truncated file: payload declares {len} bytes, {} available",
                bytes.len().saturating_sub(HEADER + 4)
            )));
        };
        let payload = &bytes[HEADER..end];
        let stored = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(CorpusError::Checksum(format!(
                "stored {stored:08x}, computed {actual:08x}"
            )));
        }
        if end + 4 != bytes.len() {
            return Err(CorpusError::Checksum("trailing bytes after checksum".into()));
        }
        Self::decode_payload(payload)
            .ok_or_else(|| CorpusError::IncompatibleIndex("payload does not decode".into()))
    }

    fn encode_payload(&self) -> Vec<u8> {
        let mut w = Encoder::default();
        w.u64(self.meta.window as u64);
        w.u64(self.meta.min_freq);
        w.u8(match self.meta.count_mode {
            CountMode::PerOccurrence => 0,
            CountMode::PerDocument => 1,
        });
        w.strings(&self.meta.stop_words);
        w.u64(self.entities.len() as u64);
        for (e, f) in self.entities.iter().zip(&self.frequencies) {
            w.str(e);
            w.u64(*f);
        }
        w.u64(self.skipgrams.len() as u64);
        for (sg, stop) in self.skipgrams.iter().zip(&self.stop_only) {
            w.strings(&sg.left);
            w.strings(&sg.right);
            w.u8(*stop as u8);
        }
        for row in &self.entity_to_sg {
            w.u64(row.len() as u64);
            for (sg, c) in row {
                w.u64(sg.0 as u64);
                w.u64(*c);
            }
        }
        w.0
    }

    fn decode_payload(payload: &[u8]) -> Option<Self> {
        let mut r = Decoder(payload);
        let window = r.u64()? as usize;
        let min_freq = r.u64()?;
        let count_mode = match r.u8()? {
            0 => CountMode::PerOccurrence,
            1 => CountMode::PerDocument,
            _ => return None,
        };
        let stop_words = r.strings()?;
        let n_entities = r.len()?;
        let mut vocab = Vec::with_capacity(n_entities);
        for _ in 0..n_entities {
            vocab.push((r.str()?, r.u64()?));
        }
        let n_sg = r.len()?;
        let mut skipgrams = Vec::with_capacity(n_sg);
        let mut stop_only = Vec::with_capacity(n_sg);
        for _ in 0..n_sg {
            let left = r.strings()?;
            let right = r.strings()?;
            if left.is_empty() && right.is_empty() {
                return None;
            }
            skipgrams.push(SkipGram { left, right });
            stop_only.push(r.u8()? != 0);
        }
        let mut entity_to_sg = Vec::with_capacity(n_entities);
        for _ in 0..n_entities {
            let n = r.len()?;
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                let sg = r.u64()?;
                if sg as usize >= n_sg {
                    return None;
                }
                row.push((SkipGramId(sg as u32), r.u64()?));
            }
            entity_to_sg.push(row);
        }
        if !r.0.is_empty() {
            return None;
        }
        Some(Self::assemble(
            IndexMeta {
                window,
                min_freq,
                count_mode,
                stop_words,
            },
            vocab,
            skipgrams,
            stop_only,
            entity_to_sg,
        ))
    }
}

#[derive(Default)]
struct Encoder(Vec<u8>);

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn strings(&mut self, items: &[String]) {
        self.u64(items.len() as u64);
        for s in items {
            self.str(s);
        }
    }
}

struct Decoder<'a>(&'a [u8]);

impl Decoder<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        if self.0.len() < n {
            return None;
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Some(head)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    /// A length prefix, rejected if it cannot possibly fit in the remaining bytes.
    fn len(&mut self) -> Option<usize> {
        let n = self.u64()? as usize;
        (n <= self.0.len()).then_some(n)
    }
    fn str(&mut self) -> Option<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
    fn strings(&mut self) -> Option<Vec<String>> {
        let n = self.len()?;
        (0..n).map(|_| self.str()).collect()
    }
}
