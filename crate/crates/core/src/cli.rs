//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | invalid configuration, failed self-test or other runtime error |
//! | 2 | missing or unreadable input file, bad command-line usage |
//! | 3 | a seed is not in the index vocabulary |
//! | 4 | the seeds share no coherent facet |
//! | 5 | gold or prediction file violates the schema |
//! | 6 | scoring sidecar unavailable or misbehaving |

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clustering::{Metric, Preference};
use crate::config::{RunConfig, ScorerKind};
use crate::corpus::{build_index, CorpusError, CorpusIndex, INDEX_FORMAT_VERSION};
use crate::embeddings::{load_embeddings, EmbeddingError, EmbeddingTable};
use crate::expansion::sidecar::SidecarClient;
use crate::expansion::{
    expand_query, CorpusScorer, ExpansionError, FacetExpansion, MlmScorer, ScoreError, Scorer, SeedSummary, Weighting,
};
use crate::fusion::{FusionError, FusionReport};
use crate::metrics::{evaluate, parse_gold, parse_predictions, MetricError};
use crate::selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_UNKNOWN_ENTITY: i32 = 3;
pub const EXIT_NO_FACET: i32 = 4;
pub const EXIT_SCHEMA: i32 = 5;
pub const EXIT_SCORER: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "facetset", about = "Multi-faceted entity set expansion")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a skip-gram index from a corpus (one document per line).
    Index(IndexArgs),
    /// Expand seed entities into one ranked list per shared facet.
    Expand(ExpandArgs),
    /// Score predictions against a gold file.
    Eval(EvalArgs),
    /// Run the seeded oracle suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print only machine-readable JSON on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, clap::Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<u64>,
    #[arg(long)]
    pub stop_words: Option<PathBuf>,
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, clap::Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, required_unless_present = "queries", conflicts_with = "queries")]
    pub query: Option<String>,
    /// Identifier echoed into the output of a single query.
    #[arg(long, requires = "query")]
    pub query_id: Option<String>,
    /// JSON list of `{query_id, seeds}` objects (gold files qualify).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Write the JSON result here as well as (or instead of) stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-seed clustering and fusion decisions here.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// A number or `median`.
    #[arg(long)]
    pub preference: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub softmax_scale: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    /// Sidecar command line, or `tcp://host:port`.
    #[arg(long)]
    pub sidecar: Option<String>,
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Comma-separated cutoffs, e.g. `5,10,20`.
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, clap::Args)]
pub struct SelftestArgs {
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MetricArg {
    Cosine,
    NegSqEuclidean,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum WeightingArg {
    Distinct,
    FrequencyWeighted,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ScorerArg {
    Corpus,
    Mlm,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn corpus_failure(path: &Path, e: CorpusError) -> Failure {
    let code = match e {
        CorpusError::UnknownEntity(_) => EXIT_UNKNOWN_ENTITY,
        CorpusError::InvalidConfig(_) => EXIT_FAILURE,
        _ => EXIT_IO,
    };
    Failure::new(code, format!("{}: {e}", path.display()))
}

fn embedding_failure(path: &Path, e: EmbeddingError) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

pub fn version_string() -> String {
    format!("{} (index format {INDEX_FORMAT_VERSION})", env!("CARGO_PKG_VERSION"))
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let version: &'static str = Box::leak(version_string().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_IO } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_IO;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_IO;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let result = match cli.command {
        Command::Index(args) => cmd_index(&args),
        Command::Expand(args) => cmd_expand(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Selftest(args) => cmd_selftest(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

fn load_config(common: &ConfigArgs) -> CliResult<RunConfig> {
    match &common.config {
        Some(path) if !path.exists() => Err(Failure::new(
            EXIT_IO,
            format!("{}: configuration file not found", path.display()),
        )),
        Some(path) => RunConfig::load(path).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

fn validated(config: RunConfig) -> CliResult<RunConfig> {
    config
        .validate()
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("invalid configuration: {e}")))?;
    Ok(config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    println!("{text}");
}

#[derive(Debug, Serialize)]
struct IndexSummary<'a> {
    corpus: &'a Path,
    index: &'a Path,
    entities: usize,
    skipgrams: usize,
    occurrences: u64,
    config: &'a RunConfig,
}

fn cmd_index(args: &IndexArgs) -> CliResult<()> {
    let mut config = load_config(&args.common)?;
    if let Some(w) = args.window {
        config.window = w;
    }
    if let Some(f) = args.min_freq {
        config.min_freq = f;
    }
    if let Some(p) = &args.stop_words {
        config.stop_words = Some(p.clone());
    }
    let config = validated(config)?;
    let index_config = config.index_config().map_err(|e| {
        let path = config.stop_words.clone().unwrap_or_default();
        corpus_failure(&path, e)
    })?;
    let file = fs::File::open(&args.corpus).map_err(|e| io_failure(&args.corpus, e))?;
    let index =
        build_index(io::BufReader::new(file), &index_config).map_err(|e| corpus_failure(&args.corpus, e))?;
    index.save(&args.out).map_err(|e| corpus_failure(&args.out, e))?;
    let (occurrences, _) = index.total_counts();
    let summary = IndexSummary {
        corpus: &args.corpus,
        index: &args.out,
        entities: index.vocab_len(),
        skipgrams: index.skipgram_len(),
        occurrences,
        config: &config,
    };
    if args.common.json {
        print_json(&summary);
    } else {
        println!(
            "indexed {} entities and {} skip-grams into {}",
            summary.entities,
            summary.skipgrams,
            args.out.display()
        );
    }
    Ok(())
}

fn apply_expand_flags(config: &mut RunConfig, args: &ExpandArgs) -> CliResult<()> {
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(k) = args.top_k {
        config.top_k = k;
    }
    if let Some(m) = args.metric {
        config.metric = match m {
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::NegSqEuclidean => Metric::NegSqEuclidean,
        };
    }
    if let Some(p) = &args.preference {
        config.preference = if p == "median" {
            Preference::MEDIAN
        } else {
            Preference::Value(
                p.parse()
                    .map_err(|_| Failure::new(EXIT_IO, format!("--preference expects a number or `median`, got `{p}`")))?,
            )
        };
    }
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    if let Some(s) = args.softmax_scale {
        config.softmax_scale = s;
    }
    if let Some(s) = args.noise_seed {
        config.noise_seed = s;
    }
    if let Some(w) = args.weighting {
        config.weighting = match w {
            WeightingArg::Distinct => Weighting::Distinct,
            WeightingArg::FrequencyWeighted => Weighting::FrequencyWeighted,
        };
    }
    if let Some(s) = args.scorer {
        config.scorer = match s {
            ScorerArg::Corpus => ScorerKind::Corpus,
            ScorerArg::Mlm => ScorerKind::Mlm,
        };
    }
    if let Some(s) = &args.sidecar {
        config.sidecar = Some(s.clone());
    }
    Ok(())
}

fn connect_sidecar(target: &str) -> Result<SidecarClient, ScoreError> {
    match target.strip_prefix("tcp://") {
        Some(addr) => SidecarClient::connect_tcp(addr),
        None => {
            let mut parts = target.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| ScoreError::ScorerUnavailable("empty sidecar command".into()))?;
            let rest: Vec<String> = parts.map(str::to_string).collect();
            SidecarClient::spawn(program, &rest)
        }
    }
}

fn make_scorer<'a>(config: &RunConfig, index: &'a CorpusIndex) -> CliResult<Box<dyn Scorer + 'a>> {
    if config.scorer == ScorerKind::Corpus {
        return Ok(Box::new(CorpusScorer::new(index)));
    }
    let target = config.sidecar.as_deref().unwrap_or_default();
    match connect_sidecar(target) {
        Ok(client) => Ok(Box::new(MlmScorer::new(client, Some(index)))),
        Err(e) if config.sidecar_fallback => {
            log::warn!("{e}; falling back to the corpus scorer");
            Ok(Box::new(CorpusScorer::new(index)))
        }
        Err(e) => Err(Failure::new(EXIT_SCORER, e.to_string())),
    }
}

#[derive(Debug, Serialize)]
struct ExpandOutput<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    query_id: Option<&'a str>,
    query: Vec<String>,
    config: &'a RunConfig,
    scorer: &'a str,
    facets: Vec<FacetExpansion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    query_id: Option<String>,
    query: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    seed_clusters: Vec<SeedSummary>,
    fusion: Option<FusionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Deserialize)]
struct QueryEntry {
    query_id: Value,
    seeds: Vec<String>,
}

fn read_queries(path: &Path) -> CliResult<Vec<(Option<String>, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let entries: Vec<QueryEntry> = serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_SCHEMA, format!("{}: {e}", path.display())))?;
    Ok(entries
        .into_iter()
        .map(|q| {
            let id = match q.query_id {
                Value::String(s) => Some(s),
                Value::Null => None,
                other => Some(other.to_string()),
            };
            (id, q.seeds)
        })
        .collect())
}

fn expansion_failure(e: &ExpansionError) -> Failure {
    if let Some(seed) = e.unknown_entity() {
        return Failure::new(EXIT_UNKNOWN_ENTITY, format!("seed `{seed}` is not in the index vocabulary"));
    }
    match e {
        ExpansionError::Fusion(FusionError::NoCoherentFacet(_)) => Failure::new(
            EXIT_NO_FACET,
            format!("{e}; rerun with --diagnostics <path> to inspect the fusion decisions"),
        ),
        ExpansionError::Scorer(_) => Failure::new(EXIT_SCORER, e.to_string()),
        _ => Failure::new(EXIT_FAILURE, e.to_string()),
    }
}

fn cmd_expand(args: &ExpandArgs) -> CliResult<()> {
    let mut config = load_config(&args.common)?;
    apply_expand_flags(&mut config, args)?;
    let config = validated(config)?;
    let queries: Vec<(Option<String>, Vec<String>)> = match (&args.query, &args.queries) {
        (Some(q), _) => vec![(
            args.query_id.clone(),
            q.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect(),
        )],
        (None, Some(path)) => read_queries(path)?,
        (None, None) => unreachable!("clap requires one of --query / --queries"),
    };
    let batch = args.queries.is_some();

    let index = CorpusIndex::load(&args.index).map_err(|e| corpus_failure(&args.index, e))?;
    let table: EmbeddingTable =
        load_embeddings(&args.embeddings, None).map_err(|e| embedding_failure(&args.embeddings, e))?;
    let scorer = make_scorer(&config, &index)?;
    let expand_config = config.expand_config();

    let mut outputs = Vec::new();
    let mut diagnostics = Vec::new();
    for (query_id, seeds) in &queries {
        let result = expand_query(seeds, &index, &table, scorer.as_ref(), &expand_config);
        let (facets, error, diag) = match result {
            Ok(q) => (
                q.facets,
                None,
                Diagnostics {
                    query_id: query_id.clone(),
                    query: q.seeds,
                    seed_clusters: q.seed_summaries,
                    fusion: Some(q.report),
                    error: None,
                },
            ),
            Err(e) => {
                let failure = expansion_failure(&e);
                let fusion = match &e {
                    ExpansionError::Fusion(FusionError::NoCoherentFacet(report)) => Some((**report).clone()),
                    _ => None,
                };
                let diag = Diagnostics {
                    query_id: query_id.clone(),
                    query: seeds.clone(),
                    seed_clusters: Vec::new(),
                    fusion,
                    error: Some(e.to_string()),
                };
                if !batch {
                    if let Some(path) = &args.diagnostics {
                        write_json(path, &diag)?;
                    }
                    return Err(failure);
                }
                log::warn!("query {:?}: {}", query_id, failure.message);
                (Vec::new(), Some(e.to_string()), diag)
            }
        };
        outputs.push(ExpandOutput {
            query_id: query_id.as_deref(),
            query: seeds.iter().map(|s| crate::expansion::normalize_entity(s)).collect(),
            config: &config,
            scorer: scorer.name(),
            facets,
            error,
        });
        diagnostics.push(diag);
    }

    let payload: Value = if batch {
        serde_json::to_value(&outputs).expect("output serializes")
    } else {
        serde_json::to_value(&outputs[0]).expect("output serializes")
    };
    if let Some(path) = &args.out {
        write_json(path, &payload)?;
    }
    if let Some(path) = &args.diagnostics {
        if batch {
            write_json(path, &diagnostics)?;
        } else {
            write_json(path, &diagnostics[0])?;
        }
    }
    if args.common.json {
        print_json(&payload);
    } else {
        print_human(&outputs);
    }
    Ok(())
}

fn print_human(outputs: &[ExpandOutput]) {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for o in outputs {
        let _ = writeln!(out, "query: {}", o.query.join(", "));
        if let Some(e) = &o.error {
            let _ = writeln!(out, "  error: {e}");
        }
        for f in &o.facets {
            let _ = writeln!(
                out,
                "  facet {} ({} skip-grams, {} occurrences)",
                f.id, f.skipgram_count, f.total_count
            );
            for (e, w) in &f.entities {
                let _ = writeln!(out, "    {w:>10.4}  {e}");
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    pred: &'a Path,
    gold: &'a Path,
    config: &'a RunConfig,
    #[serde(flatten)]
    report: &'a crate::metrics::EvalReport,
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_SCHEMA, format!("{}: invalid JSON: {e}", path.display())))
}

fn schema_failure(path: &Path, e: MetricError) -> Failure {
    let code = match e {
        MetricError::ZeroCutoff => EXIT_FAILURE,
        _ => EXIT_SCHEMA,
    };
    match e {
        MetricError::Schema { pointer, message } => {
            Failure::new(code, format!("{}: at `{pointer}`: {message}", path.display()))
        }
        other => Failure::new(code, format!("{}: {other}", path.display())),
    }
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let mut config = load_config(&args.common)?;
    if let Some(c) = &args.cutoffs {
        config.cutoffs = c.clone();
    }
    let config = validated(config)?;
    let gold = parse_gold(&read_json(&args.gold)?).map_err(|e| schema_failure(&args.gold, e))?;
    let pred = parse_predictions(&read_json(&args.pred)?).map_err(|e| schema_failure(&args.pred, e))?;
    let report = evaluate(&gold, &pred, &config.cutoffs).map_err(|e| schema_failure(&args.gold, e))?;
    let output = EvalOutput {
        pred: &args.pred,
        gold: &args.gold,
        config: &config,
        report: &report,
    };
    if let Some(path) = &args.out {
        write_json(path, &output)?;
    }
    if args.common.json {
        print_json(&output);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs) -> CliResult<()> {
    let outcomes = selftest::run_all();
    if args.json {
        print_json(&outcomes);
    } else {
        for o in &outcomes {
            println!(
                "{} {} ({} cases, worst deviation {:.2e}, {:.3} s)",
                if o.passed() { "PASS" } else { "FAIL" },
                o.name,
                o.cases,
                o.worst_error,
                o.elapsed.as_secs_f64()
            );
            for f in &o.failures {
                println!("    {f}");
            }
        }
    }
    if outcomes.iter().all(|o| o.passed()) {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILURE, "self-test failed"))
    }
}
