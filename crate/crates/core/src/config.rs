//! Run configuration: one flat TOML table covering every tunable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ApParams, ClusterConfig, Metric, Preference};
use crate::corpus::{default_stop_words, read_stop_words, CorpusError, CountMode, IndexConfig};
use crate::expansion::{CandidateScope, ExpandConfig, ExpandParams, FoldOrder, Weighting};
use crate::fusion::{CcaOptions, FusionConfig, RelevanceParams};
use crate::metrics::DEFAULT_CUTOFFS;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("`{key}` {message}")]
    Range { key: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Corpus,
    Mlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // index
    pub window: usize,
    pub min_freq: u64,
    pub count_mode: CountMode,
    /// Stop-word list; the built-in list when absent.
    pub stop_words: Option<PathBuf>,
    // clustering
    pub max_skipgrams: usize,
    pub include_stop_only: bool,
    pub metric: Metric,
    pub preference: Preference,
    pub damping: f64,
    pub max_iter: usize,
    pub stable_iters: usize,
    pub noise_seed: u64,
    // fusion
    pub ridge: f64,
    pub relative_ridge: bool,
    pub centered: bool,
    pub threshold: f64,
    pub fallback_threshold: f64,
    pub softmax_scale: f64,
    pub fold_order: FoldOrder,
    // expansion
    pub scorer: ScorerKind,
    /// Sidecar command line, or `tcp://host:port`.
    pub sidecar: Option<String>,
    /// Use the corpus scorer when the sidecar cannot be reached.
    pub sidecar_fallback: bool,
    pub top_k: usize,
    pub n: usize,
    pub weighting: Weighting,
    pub scope: CandidateScope,
    // evaluation
    pub cutoffs: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let index = IndexConfig::default();
        let cluster = ClusterConfig::default();
        let cca = CcaOptions::default();
        let rel = RelevanceParams::default();
        let expand = ExpandParams::default();
        Self {
            window: index.window,
            min_freq: index.min_freq,
            count_mode: index.count_mode,
            stop_words: None,
            max_skipgrams: cluster.max_skipgrams,
            include_stop_only: cluster.include_stop_only,
            metric: cluster.metric,
            preference: cluster.preference,
            damping: cluster.ap.damping,
            max_iter: cluster.ap.max_iter,
            stable_iters: cluster.ap.stable_iters,
            noise_seed: cluster.noise_seed,
            ridge: cca.ridge,
            relative_ridge: cca.relative_ridge,
            centered: cca.centered,
            threshold: rel.threshold,
            fallback_threshold: rel.fallback_threshold,
            softmax_scale: rel.softmax_scale,
            fold_order: FoldOrder::default(),
            scorer: ScorerKind::default(),
            sidecar: None,
            sidecar_fallback: false,
            top_k: expand.top_k,
            n: expand.n,
            weighting: expand.weighting,
            scope: expand.scope,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
        }
    }
}

fn range(key: &'static str, ok: bool, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range {
            key,
            message: message.to_string(),
        })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        range("window", self.window >= 1, "must be at least 1")?;
        range("min_freq", self.min_freq >= 1, "must be at least 1")?;
        range("max_skipgrams", self.max_skipgrams >= 1, "must be at least 1")?;
        range("damping", (0.5..1.0).contains(&self.damping), "must lie in [0.5, 1)")?;
        range("max_iter", self.max_iter >= 1, "must be at least 1")?;
        range(
            "stable_iters",
            (1..=self.max_iter).contains(&self.stable_iters),
            "must lie in [1, max_iter]",
        )?;
        if let Preference::Value(p) = self.preference {
            range("preference", p.is_finite(), "must be finite or \"median\"")?;
        }
        range("ridge", self.ridge.is_finite() && self.ridge > 0.0, "must be positive")?;
        range("threshold", self.threshold.is_finite() && self.threshold >= 0.0, "must be non-negative")?;
        range(
            "fallback_threshold",
            (0.0..=1.0).contains(&self.fallback_threshold),
            "must lie in [0, 1]",
        )?;
        range(
            "softmax_scale",
            self.softmax_scale.is_finite() && self.softmax_scale > 0.0,
            "must be positive",
        )?;
        range("top_k", self.top_k >= 1, "must be at least 1")?;
        range("n", self.n >= 1, "must be at least 1")?;
        range(
            "cutoffs",
            !self.cutoffs.is_empty() && self.cutoffs.iter().all(|&l| l >= 1),
            "must be a non-empty list of positive integers",
        )?;
        range(
            "sidecar",
            self.scorer != ScorerKind::Mlm || self.sidecar.is_some(),
            "is required when scorer = \"mlm\"",
        )
    }

    pub fn index_config(&self) -> Result<IndexConfig, CorpusError> {
        Ok(IndexConfig {
            window: self.window,
            min_freq: self.min_freq,
            count_mode: self.count_mode,
            stop_words: match &self.stop_words {
                Some(path) => read_stop_words(path)?,
                None => default_stop_words(),
            },
        })
    }

    pub fn expand_config(&self) -> ExpandConfig {
        ExpandConfig {
            cluster: ClusterConfig {
                metric: self.metric,
                preference: self.preference,
                ap: ApParams {
                    damping: self.damping,
                    max_iter: self.max_iter,
                    stable_iters: self.stable_iters,
                },
                max_skipgrams: self.max_skipgrams,
                include_stop_only: self.include_stop_only,
                noise_seed: self.noise_seed,
            },
            fusion: FusionConfig {
                cca: CcaOptions {
                    ridge: self.ridge,
                    relative_ridge: self.relative_ridge,
                    centered: self.centered,
                },
                relevance: RelevanceParams {
                    threshold: self.threshold,
                    fallback_threshold: self.fallback_threshold,
                    softmax_scale: self.softmax_scale,
                },
            },
            expand: ExpandParams {
                n: self.n,
                top_k: self.top_k,
                weighting: self.weighting,
                scope: self.scope,
            },
            fold_order: self.fold_order,
        }
    }
}
