//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 backend error.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::clock::{Clock, FixedClock, SystemClock};
use crate::config::{ConfigError, WorkbenchConfig};
use crate::corpus::{parse_corpus, CorpusError};
use crate::dataset::{
    build_ner_samples, build_recommendation_samples, dedup_filter, emit_dataset, load_process_records, DatasetError,
    MaterialCategories, TrainingManifest,
};
use crate::eval::{
    load_eval_items, load_judged_items_file, render_ablation_json, render_ablation_table, render_evaluation_json,
    render_evaluation_table, run_ablation, evaluate, AblationConfig, AblationPorts, EvalError, FixtureJudgments, ModelIds,
};
use crate::gateway::{Gateway, GatewayError, TranscriptMode};
use crate::index::{embed, Embedder, FlatIndex, IndexError, VectorSearch};
use crate::ingest::{ingest_with, load_metadata, CleaningRuleSet, CompiledRules, IngestError, StructuredDocument, TaggedSpanDocument};
use crate::rag::{
    build_exemplar_store, extract_batch, recommend, write_run_records, ExemplarStore, ExtractionItem, NerConfig, NerPorts,
    PipelineError, RecommendConfig, RecommendationQuery, RunStatus, ShotMode,
};
use crate::workbench::{config_slug, Services, Store, Workbench, WorkbenchError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Gateway(g) => g.into(),
            ConfigError::Index(i) => i.into(),
            ConfigError::Unreadable { .. } | ConfigError::Invalid(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidRequest(_) | GatewayError::Transcript(_) => CliError::Data(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        if e.is_retryable() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            PipelineError::Index(i) => i.into(),
            PipelineError::MissingRetrieval => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::ExtractionFailed { .. } => CliError::Backend(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<WorkbenchError> for CliError {
    fn from(e: WorkbenchError) -> Self {
        match e {
            WorkbenchError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        data(e)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        data(e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        data(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "electrocat", version, about = "Retrieval-augmented extraction and evaluation for electrocatalysis literature")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Transcript file for recording or replaying model responses.
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// What to do with the transcript.
    #[arg(long, global = true, value_enum, default_value_t = TranscriptArg::Replay)]
    pub transcript_mode: TranscriptArg,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TranscriptArg {
    Record,
    Replay,
    Passthrough,
}

impl From<TranscriptArg> for TranscriptMode {
    fn from(a: TranscriptArg) -> Self {
        match a {
            TranscriptArg::Record => TranscriptMode::Record,
            TranscriptArg::Replay => TranscriptMode::Replay,
            TranscriptArg::Passthrough => TranscriptMode::Passthrough,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tagged span documents (JSON lines) → structured documents.
    Ingest {
        #[arg(long)]
        spans: PathBuf,
        /// Metadata CSV (doc_id,title,abstract,journal,year,open_access).
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Cleaning rule set (TOML); defaults to the built-in set.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Build the exemplar store and vector index, or query an existing index.
    Index {
        /// Annotated corpus CSV.
        #[arg(long, requires = "documents")]
        corpus: Option<PathBuf>,
        /// Structured documents (JSON lines) from `ingest`.
        #[arg(long)]
        documents: Option<PathBuf>,
        /// Process descriptions (JSON lines of {doc_id, text}).
        #[arg(long)]
        processes: Option<PathBuf>,
        /// Existing exemplar store to index instead of building one.
        #[arg(long, conflicts_with = "corpus")]
        exemplars: Option<PathBuf>,
        /// Query a persisted index instead of building.
        #[arg(long, requires = "index")]
        query: Option<String>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Entity extraction over abstracts (JSON lines of {item_id, abstract}).
    Extract {
        #[arg(long)]
        items: PathBuf,
        /// zero_shot, few_shot or few_shot:K.
        #[arg(long, default_value = "few_shot")]
        mode: ShotMode,
        /// Model id; defaults to the fine-tuned model from the config.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Catalyst recommendation for queries (JSON lines).
    Recommend {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        model: Option<String>,
    },
    /// Compile the instruction-tuning dataset and its manifest.
    BuildDataset {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        documents: PathBuf,
        /// Process records (JSON lines).
        #[arg(long)]
        processes: Option<PathBuf>,
        /// Material category vocabulary (TOML table of material = category).
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long, default_value = "base-model")]
        base_model: String,
    },
    /// Score judgment fixtures (JSON lines of judged items).
    Score {
        #[arg(long, required = true, num_args = 1..)]
        judgments: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
    },
    /// Run the four-cell model × shot-mode ablation.
    Ablate {
        /// Evaluation items (JSON lines of {item_id, category, abstract}).
        #[arg(long)]
        items: PathBuf,
        /// Directory with one `<config-slug>.jsonl` judgment file per config.
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long)]
        exemplars: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
    },
    /// Start the HTTP review service.
    Serve {
        /// Listen address; defaults to `bind` from the config.
        #[arg(long)]
        bind: Option<String>,
        /// Event log directory; defaults to `data_dir` from the config.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(&cli.global.log);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

fn init_logging(level: &str) {
    let level = level.parse().unwrap_or(tracing::Level::WARN);
    let _ = tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).try_init();
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn to_jsonl<T: serde::Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
}

struct Context {
    global: GlobalArgs,
    config: WorkbenchConfig,
}

impl Context {
    fn gateway(&self) -> Result<Gateway, CliError> {
        let transcript = self.global.transcript.as_deref().map(|p| (p, self.global.transcript_mode.into()));
        Ok(self.config.build_gateway(transcript)?)
    }

    /// Replay runs use a fixed clock so their records are reproducible.
    fn clock(&self) -> Box<dyn Clock> {
        if self.global.transcript.is_some() && self.global.transcript_mode == TranscriptArg::Replay {
            Box::new(FixedClock::epoch())
        } else {
            Box::new(SystemClock)
        }
    }

    /// Loads the exemplar store and either a persisted index or one built from it.
    fn retrieval(&self, exemplars: Option<&Path>, index: Option<&Path>, embedder: &dyn Embedder) -> Result<Option<(ExemplarStore, FlatIndex)>, CliError> {
        let Some(exemplars) = exemplars else {
            return match index {
                Some(_) => Err(CliError::Usage("--index needs --exemplars".into())),
                None => Ok(None),
            };
        };
        let store = ExemplarStore::load(exemplars)?;
        let index = match index {
            Some(p) => FlatIndex::load(p)?,
            None => store.build_index(embedder)?,
        };
        if index.dim() != embedder.dim() {
            return Err(CliError::Data(format!("index dimension {} does not match embedder dimension {}", index.dim(), embedder.dim())));
        }
        Ok(Some((store, index)))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.global.config {
        Some(p) => WorkbenchConfig::load(p)?,
        None => WorkbenchConfig::default(),
    };
    let ctx = Context { global: cli.global, config };
    match cli.command {
        Command::Ingest { spans, metadata, rules } => cmd_ingest(&ctx, &spans, metadata.as_deref(), rules.as_deref()),
        Command::Index { corpus, documents, processes, exemplars, query, index, k } => {
            if let Some(q) = query {
                return cmd_index_query(&ctx, index.as_deref().expect("clap enforces --index"), &q, k);
            }
            cmd_index_build(&ctx, corpus.as_deref(), documents.as_deref(), processes.as_deref(), exemplars.as_deref())
        }
        Command::Extract { items, mode, model, exemplars, index } => {
            cmd_extract(&ctx, &items, mode, model, exemplars.as_deref(), index.as_deref())
        }
        Command::Recommend { queries, model } => cmd_recommend(&ctx, &queries, model),
        Command::BuildDataset { corpus, documents, processes, categories, base_model } => {
            cmd_build_dataset(&ctx, &corpus, &documents, processes.as_deref(), categories.as_deref(), &base_model)
        }
        Command::Score { judgments, format } => cmd_score(&ctx, &judgments, format),
        Command::Ablate { items, judgments, exemplars, index, format } => {
            cmd_ablate(&ctx, &items, &judgments, &exemplars, index.as_deref(), format)
        }
        Command::Serve { bind, data_dir, exemplars, index } => cmd_serve(&ctx, bind, data_dir, exemplars.as_deref(), index.as_deref()),
    }
}

fn cmd_ingest(ctx: &Context, spans: &Path, metadata: Option<&Path>, rules: Option<&Path>) -> Result<(), CliError> {
    let rule_set = match rules {
        Some(p) => toml::from_str::<CleaningRuleSet>(&read(p)?).map_err(data)?,
        None => CleaningRuleSet::default(),
    };
    let compiled = CompiledRules::new(&rule_set)?;
    let metas = match metadata {
        Some(p) => {
            let load = load_metadata(&read(p)?)?;
            for r in &load.rejects {
                tracing::warn!(row = r.row, reason = %r.reason, "metadata row rejected");
            }
            load.metas.into_iter().map(|m| (m.doc_id.clone(), m)).collect()
        }
        None => HashMap::new(),
    };
    let raw: Vec<TaggedSpanDocument> = jsonl(spans)?;
    let mut docs = Vec::new();
    let mut failures = 0;
    for r in &raw {
        match ingest_with(r, &compiled) {
            Ok(mut doc) => {
                if let Some(m) = metas.get(&doc.doc_id) {
                    doc.attach_meta(m.clone());
                }
                docs.push(doc);
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", r.doc_id);
            }
        }
    }
    write(&ctx.global.out.join("documents.jsonl"), &to_jsonl(&docs))?;
    println!("ingested {} documents ({} rejected) with rule set {}", docs.len(), failures, compiled.id());
    if docs.is_empty() && !raw.is_empty() {
        return Err(CliError::Data("no document survived ingestion".into()));
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct ProcessText {
    doc_id: String,
    text: String,
}

fn cmd_index_build(
    ctx: &Context,
    corpus: Option<&Path>,
    documents: Option<&Path>,
    processes: Option<&Path>,
    exemplars: Option<&Path>,
) -> Result<(), CliError> {
    let store = match (exemplars, corpus, documents) {
        (Some(p), _, _) => ExemplarStore::load(p)?,
        (None, Some(c), Some(d)) => {
            let parsed = parse_corpus(&read(c)?)?;
            for r in &parsed.rejects {
                tracing::warn!(row = r.row, reason = %r.reason, "corpus row rejected");
            }
            let docs: Vec<StructuredDocument> = jsonl(d)?;
            let descriptions: HashMap<String, String> = match processes {
                Some(p) => jsonl::<ProcessText>(p)?.into_iter().map(|t| (t.doc_id, t.text)).collect(),
                None => HashMap::new(),
            };
            build_exemplar_store(&parsed.records, &docs, &descriptions)
        }
        _ => return Err(CliError::Usage("give --exemplars, or --corpus with --documents".into())),
    };
    let embedder = ctx.config.build_embedder()?;
    let index = store.build_index(embedder.as_ref())?;
    store.save(&ctx.global.out.join("exemplars.jsonl"))?;
    fs::create_dir_all(&ctx.global.out).map_err(data)?;
    index.persist(&ctx.global.out.join("index.jsonl"))?;
    println!("indexed {} exemplars with {} (dim {})", index.len(), embedder.model_id(), embedder.dim());
    Ok(())
}

fn cmd_index_query(ctx: &Context, index: &Path, query: &str, k: usize) -> Result<(), CliError> {
    let embedder = ctx.config.build_embedder()?;
    let index = FlatIndex::load(index)?;
    let q = embed(query, embedder.as_ref())?;
    for hit in index.search_topk(&q, k)? {
        println!("{:.6}\t{}", hit.score, hit.chunk_id);
    }
    Ok(())
}

fn cmd_extract(
    ctx: &Context,
    items: &Path,
    mode: ShotMode,
    model: Option<String>,
    exemplars: Option<&Path>,
    index: Option<&Path>,
) -> Result<(), CliError> {
    let items: Vec<ExtractionItem> = jsonl(items)?;
    let embedder = ctx.config.build_embedder()?;
    let retrieval = ctx.retrieval(exemplars, index, embedder.as_ref())?;
    if mode != ShotMode::ZeroShot && retrieval.is_none() {
        return Err(CliError::Usage("few-shot extraction needs --exemplars".into()));
    }
    let gateway = ctx.gateway()?;
    let clock = ctx.clock();
    let ports = NerPorts {
        gateway: &gateway,
        embedder: embedder.as_ref(),
        index: retrieval.as_ref().map(|(_, i)| i as &dyn VectorSearch),
        exemplars: retrieval.as_ref().map(|(s, _)| s),
        clock: clock.as_ref(),
    };
    let mut cfg = NerConfig::new(model.unwrap_or_else(|| ctx.config.fine_tuned_model.clone()), mode);
    cfg.temperature = ctx.config.temperature;
    cfg.max_tokens = ctx.config.max_tokens;
    let records = extract_batch(&items, &cfg, &ports, ctx.config.max_in_flight);
    fs::create_dir_all(&ctx.global.out).map_err(data)?;
    let path = ctx.global.out.join("run_records.jsonl");
    write_run_records(&path, &records).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let failed: Vec<_> = records.iter().filter(|r| r.status == RunStatus::Failed).collect();
    println!("extracted {} items ({} failed) → {}", records.len(), failed.len(), path.display());
    match failed.first() {
        Some(r) => Err(CliError::Backend(format!("{}: {}", r.item_id, r.error.clone().unwrap_or_default()))),
        None => Ok(()),
    }
}

#[derive(serde::Deserialize)]
struct QueryLine {
    #[serde(default)]
    query_id: Option<String>,
    #[serde(flatten)]
    query: RecommendationQuery,
}

fn cmd_recommend(ctx: &Context, queries: &Path, model: Option<String>) -> Result<(), CliError> {
    let queries: Vec<QueryLine> = jsonl(queries)?;
    let gateway = ctx.gateway()?;
    let cfg = RecommendConfig {
        model: model.unwrap_or_else(|| ctx.config.fine_tuned_model.clone()),
        temperature: ctx.config.temperature,
        max_tokens: ctx.config.max_tokens,
    };
    let mut rows = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let answer = recommend(&q.query, &cfg, &gateway)?;
        rows.push(serde_json::json!({
            "query_id": q.query_id.clone().unwrap_or_else(|| format!("q{}", i + 1)),
            "query": q.query,
            "answer": answer,
        }));
    }
    let path = ctx.global.out.join("recommendations.jsonl");
    write(&path, &to_jsonl(&rows))?;
    println!("answered {} queries → {}", rows.len(), path.display());
    Ok(())
}

fn cmd_build_dataset(
    ctx: &Context,
    corpus: &Path,
    documents: &Path,
    processes: Option<&Path>,
    categories: Option<&Path>,
    base_model: &str,
) -> Result<(), CliError> {
    let parsed = parse_corpus(&read(corpus)?)?;
    let docs: Vec<StructuredDocument> = jsonl(documents)?;
    let mut samples = build_ner_samples(&parsed.records, &docs)?;
    if let Some(p) = processes {
        let records = load_process_records(&read(p)?)?;
        let vocab = match categories {
            Some(c) => MaterialCategories::with_vocabulary(
                toml::from_str::<std::collections::BTreeMap<String, String>>(&read(c)?).map_err(data)?,
            ),
            None => MaterialCategories::default(),
        };
        samples.extend(build_recommendation_samples(&records, &vocab));
    }
    let (kept, report) = dedup_filter(&samples);
    let emitted = emit_dataset(&kept, &TrainingManifest::new(base_model), &ctx.global.out)?;
    write(&ctx.global.out.join("drop_report.json"), &(serde_json::to_string_pretty(&report).map_err(data)? + "\n"))?;
    println!(
        "{} samples kept, {} dropped ({} duplicates); digest {}",
        kept.len(),
        report.len(),
        report.duplicates(),
        emitted.manifest.dataset_digest
    );
    Ok(())
}

fn cmd_score(ctx: &Context, judgments: &[PathBuf], format: FormatArg) -> Result<(), CliError> {
    let mut items = Vec::new();
    for p in judgments {
        items.extend(load_judged_items_file(p)?);
    }
    let report = evaluate(&items)?;
    let (table, json) = (render_evaluation_table(&report), render_evaluation_json(&report));
    print!("{}", if format == FormatArg::Table { &table } else { &json });
    write(&ctx.global.out.join("score.txt"), &table)?;
    write(&ctx.global.out.join("score.json"), &json)?;
    Ok(())
}

fn cmd_ablate(ctx: &Context, items: &Path, judgments: &Path, exemplars: &Path, index: Option<&Path>, format: FormatArg) -> Result<(), CliError> {
    let items = load_eval_items(&read(items)?, &items.display().to_string())?;
    let embedder = ctx.config.build_embedder()?;
    let (store, index) = ctx.retrieval(Some(exemplars), index, embedder.as_ref())?.expect("exemplars given");
    let grid = AblationConfig::canonical_grid(ctx.config.few_shot_k);
    let mut source = FixtureJudgments::new();
    for config in &grid {
        let path = judgments.join(format!("{}.jsonl", config_slug(config)));
        if path.exists() {
            source.insert(config, load_judged_items_file(&path)?);
        }
    }
    let gateway = ctx.gateway()?;
    let clock = ctx.clock();
    let models = ModelIds { baseline: ctx.config.baseline_model.clone(), fine_tuned: ctx.config.fine_tuned_model.clone() };
    let ports = AblationPorts {
        ner: NerPorts { gateway: &gateway, embedder: embedder.as_ref(), index: Some(&index), exemplars: Some(&store), clock: clock.as_ref() },
        models: &models,
        max_tokens: ctx.config.max_tokens,
        workers: ctx.config.max_in_flight,
    };
    let report = run_ablation(&grid, &items, &ports, &source)?;
    let (table, json) = (render_ablation_table(&report), render_ablation_json(&report));
    print!("{}", if format == FormatArg::Table { &table } else { &json });
    write(&ctx.global.out.join("ablation.txt"), &table)?;
    write(&ctx.global.out.join("ablation.json"), &json)?;
    Ok(())
}

fn cmd_serve(ctx: &Context, bind: Option<String>, data_dir: Option<PathBuf>, exemplars: Option<&Path>, index: Option<&Path>) -> Result<(), CliError> {
    let addr = bind.unwrap_or_else(|| ctx.config.bind.clone());
    let addr = addr.parse().map_err(|e| CliError::Usage(format!("bad bind address `{addr}`: {e}")))?;
    let data_dir = data_dir.unwrap_or_else(|| ctx.config.data_dir.clone());
    let embedder: Arc<dyn Embedder> = ctx.config.build_embedder()?;
    let retrieval = ctx.retrieval(exemplars, index, embedder.as_ref())?;
    let (exemplars, index) = match retrieval {
        Some((s, i)) => (Some(Arc::new(s)), Some(Arc::new(i) as Arc<dyn VectorSearch>)),
        None => (None, None),
    };
    let services = Services {
        gateway: Arc::new(ctx.gateway()?),
        embedder,
        index,
        exemplars,
        clock: Arc::new(SystemClock),
    };
    let wb = Arc::new(Workbench::new(Store::open(&data_dir)?, services, ctx.config.clone()));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Backend(e.to_string()))?;
    rt.block_on(crate::service::serve(wb, addr)).map_err(|e| CliError::Backend(e.to_string()))
}
