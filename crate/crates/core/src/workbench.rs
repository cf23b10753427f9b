//! Review runs and expert judgments.
//!
//! State is an append-only JSON-lines event log (`events.jsonl`) plus an
//! in-memory projection rebuilt from it on open. Appends are serialized and
//! fsynced before they are acknowledged. Judgments are never overwritten:
//! each submission appends a new version and the latest version counts.
//! Metrics are recomputed from the log on every read through [`crate::eval`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::config::WorkbenchConfig;
use crate::corpus::EntityLabel;
use crate::dataset::BUILDER_VERSION;
use crate::eval::{
    ablation_row, aggregate, canonical_order, evaluate, render_ablation_json, render_ablation_table, render_evaluation_json,
    render_evaluation_table, score_category, AblationConfig, AblationReport, CategoryMetrics, EvalError, JudgedItem, Judgment,
    ModelIds,
};
use crate::gateway::Gateway;
use crate::index::{Embedder, VectorSearch};
use crate::rag::{
    extract_batch, recommend, ExemplarStore, ExtractionItem, ExtractionResult, NerConfig, NerPorts, RecommendConfig,
    RecommendationAnswer, RecommendationQuery, RunStatus, ShotMode, NER_TEMPLATE_VERSION, RECOMMEND_TEMPLATE_VERSION,
};

pub const EVENT_LOG: &str = "events.jsonl";

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("run {run_id} is {status}; judgments open once it is complete")]
    RunNotComplete { run_id: String, status: RunState },
    #[error("no report for run {run_id}: {reason}")]
    ReportUnavailable { run_id: String, reason: String },
    #[error("event log {path}: {message}")]
    Storage { path: String, message: String },
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Ner,
    Recommend,
    Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Complete,
    Failed,
}

impl std::fmt::Display for RunState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunState::Running => "running",
            RunState::Complete => "complete",
            RunState::Failed => "failed",
        })
    }
}

/// One cell of an ablation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub slug: String,
    pub config: AblationConfig,
    pub model: String,
}

/// Short path-safe name of a config, e.g. `fine_tuned-few3`.
pub fn config_slug(c: &AblationConfig) -> String {
    match c.shot_mode {
        ShotMode::ZeroShot => format!("{}-zero", c.model_variant),
        ShotMode::FewShot { k } => format!("{}-few{k}", c.model_variant),
    }
}

/// Immutable configuration snapshot taken at run creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ShotMode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridCell>,
    pub template_version: String,
    pub rule_set_id: String,
    pub builder_version: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub run_id: String,
    pub kind: RunKind,
    pub config: RunConfig,
    pub item_ids: Vec<String>,
    pub status: RunState,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSource {
    Abstract(String),
    Query(RecommendationQuery),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedOutput {
    Entities(ExtractionResult),
    Recommendation(RecommendationAnswer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JudgmentState {
    Pending,
    Judged { version: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub item_id: String,
    pub version: u32,
    pub judgment: Judgment,
    pub reviewer: String,
    pub judged_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    /// Globally unique: `{run_id}:{source_id}`, or `{run_id}:{slug}:{source_id}` in ablation runs.
    pub item_id: String,
    pub run_id: String,
    /// The id the item was submitted with.
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<EntityLabel>,
    pub source: ItemSource,
    pub processed: bool,
    #[serde(default)]
    pub raw_text: Option<String>,
    #[serde(default)]
    pub parsed: Option<ParsedOutput>,
    /// The values the reviewer judges: the parsed answer for `category`.
    #[serde(default)]
    pub llm_answer: Vec<String>,
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
    pub judgment_state: JudgmentState,
    #[serde(default)]
    pub latest_judgment: Option<JudgmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    RunCreated {
        run: Run,
        items: Vec<ReviewItem>,
    },
    ItemProcessed {
        item_id: String,
        raw_text: Option<String>,
        parsed: Option<ParsedOutput>,
        llm_answer: Vec<String>,
        exemplar_ids: Vec<String>,
        error: Option<String>,
    },
    RunFinished {
        run_id: String,
        status: RunState,
        finished_at: DateTime<Utc>,
        error: Option<String>,
    },
    JudgmentSubmitted(JudgmentRecord),
}

#[derive(Debug, Default)]
struct Projection {
    runs: BTreeMap<String, Run>,
    items: HashMap<String, ReviewItem>,
    audit: HashMap<String, Vec<JudgmentRecord>>,
    idempotency: HashMap<String, String>,
}

impl Projection {
    fn apply(&mut self, e: Event) {
        match e {
            Event::RunCreated { run, items } => {
                if let Some(k) = &run.idempotency_key {
                    self.idempotency.insert(k.clone(), run.run_id.clone());
                }
                for item in items {
                    self.items.insert(item.item_id.clone(), item);
                }
                self.runs.insert(run.run_id.clone(), run);
            }
            Event::ItemProcessed { item_id, raw_text, parsed, llm_answer, exemplar_ids, error } => {
                if let Some(item) = self.items.get_mut(&item_id) {
                    item.processed = true;
                    item.raw_text = raw_text;
                    item.parsed = parsed;
                    item.llm_answer = llm_answer;
                    item.exemplar_ids = exemplar_ids;
                    item.error = error;
                }
            }
            Event::RunFinished { run_id, status, finished_at, error } => {
                if let Some(run) = self.runs.get_mut(&run_id) {
                    if run.status == RunState::Running {
                        run.status = status;
                        run.finished_at = Some(finished_at);
                        run.error = error;
                    }
                }
            }
            Event::JudgmentSubmitted(record) => {
                if let Some(item) = self.items.get_mut(&record.item_id) {
                    let newer = item.latest_judgment.as_ref().is_none_or(|j| record.version > j.version);
                    if newer {
                        item.judgment_state = JudgmentState::Judged { version: record.version };
                        item.latest_judgment = Some(record.clone());
                    }
                }
                self.audit.entry(record.item_id.clone()).or_default().push(record);
            }
        }
    }
}

/// Event log with a single serialized writer and snapshot reads.
pub struct Store {
    path: Option<PathBuf>,
    writer: Mutex<Option<File>>,
    state: RwLock<Projection>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store { path: None, writer: Mutex::new(None), state: RwLock::new(Projection::default()) }
    }

    /// Opens (or creates) `dir/events.jsonl` and replays it. A torn final
    /// line from an interrupted write is ignored; any other bad line is an error.
    pub fn open(dir: &Path) -> Result<Self, WorkbenchError> {
        let path = dir.join(EVENT_LOG);
        let storage = |e: std::io::Error| WorkbenchError::Storage { path: path.display().to_string(), message: e.to_string() };
        fs::create_dir_all(dir).map_err(storage)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(storage(e)),
        };
        let mut projection = Projection::default();
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        let mut valid_len = 0;
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                valid_len += line.len();
                continue;
            }
            match serde_json::from_str::<Event>(line) {
                Ok(e) => {
                    projection.apply(e);
                    valid_len += line.len();
                }
                Err(e) if i + 1 == lines.len() && !line.ends_with('\n') => {
                    tracing::warn!(line = i + 1, error = %e, "ignoring torn final event");
                }
                Err(e) => return Err(WorkbenchError::CorruptLog { line: i + 1, message: e.to_string() }),
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(storage)?;
        if valid_len < text.len() {
            file.set_len(valid_len as u64).map_err(storage)?;
        }
        Ok(Store { path: Some(path), writer: Mutex::new(Some(file)), state: RwLock::new(projection) })
    }

    /// Builds an event from the current state and appends it, all under the
    /// writer lock, so decisions (ids, versions) never race. The closure may
    /// decline to append by returning no event.
    fn append_with<T>(&self, f: impl FnOnce(&Projection) -> Result<(Option<Event>, T), WorkbenchError>) -> Result<T, WorkbenchError> {
        let mut writer = self.writer.lock();
        let (event, out) = f(&self.state.read())?;
        let Some(event) = event else { return Ok(out) };
        if let Some(file) = writer.as_mut() {
            let storage = |e: std::io::Error| WorkbenchError::Storage {
                path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                message: e.to_string(),
            };
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(storage)?;
            file.sync_data().map_err(storage)?;
        }
        self.state.write().apply(event);
        Ok(out)
    }

    fn read<T>(&self, f: impl FnOnce(&Projection) -> T) -> T {
        f(&self.state.read())
    }
}

/// An item submitted for a run. NER and ablation runs take abstracts with a
/// category; recommendation runs take queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemInput {
    Ner { item_id: String, category: EntityLabel, r#abstract: String },
    Recommend { item_id: String, query: RecommendationQuery },
}

impl ItemInput {
    fn id(&self) -> &str {
        match self {
            ItemInput::Ner { item_id, .. } | ItemInput::Recommend { item_id, .. } => item_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRunRequest {
    pub kind: RunKind,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub mode: Option<ShotMode>,
    #[serde(default)]
    pub models: Option<ModelIds>,
    #[serde(default)]
    pub few_shot_k: Option<usize>,
    pub items: Vec<ItemInput>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

impl CreateRunRequest {
    pub fn ner(items: Vec<ItemInput>) -> Self {
        CreateRunRequest { kind: RunKind::Ner, model: None, mode: None, models: None, few_shot_k: None, items, idempotency_key: None }
    }
}

/// Backends a workbench executes runs against.
#[derive(Clone)]
pub struct Services {
    pub gateway: Arc<Gateway>,
    pub embedder: Arc<dyn Embedder>,
    pub index: Option<Arc<dyn VectorSearch>>,
    pub exemplars: Option<Arc<ExemplarStore>>,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemFilter {
    #[default]
    All,
    Pending,
    Judged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStatus {
    pub category: EntityLabel,
    pub judged: u64,
    pub pending: u64,
    pub metrics: Option<CategoryMetrics>,
    pub modified_accuracy_percent: Option<String>,
    /// `EmptyItemSet` when no item of the category is judged yet.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsGroup {
    /// Ablation config slug; absent for single-config runs.
    pub config: Option<String>,
    pub categories: Vec<CategoryStatus>,
    pub overall: Option<CategoryMetrics>,
    pub overall_percent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub status: RunState,
    pub judged: u64,
    pub pending: u64,
    pub groups: Vec<MetricsGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Json,
}

pub struct Workbench {
    store: Store,
    services: Services,
    settings: WorkbenchConfig,
}

fn valid_source_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl Workbench {
    pub fn new(store: Store, services: Services, settings: WorkbenchConfig) -> Self {
        Workbench { store, services, settings }
    }

    pub fn settings(&self) -> &WorkbenchConfig {
        &self.settings
    }

    fn snapshot(&self, req: &CreateRunRequest) -> Result<RunConfig, WorkbenchError> {
        let invalid = |m: &str| Err(WorkbenchError::InvalidConfig(m.to_string()));
        let s = &self.settings;
        let mut config = RunConfig {
            model: None,
            mode: None,
            grid: Vec::new(),
            template_version: NER_TEMPLATE_VERSION.into(),
            rule_set_id: s.rule_set_id.clone(),
            builder_version: BUILDER_VERSION.into(),
            temperature: s.temperature,
            max_tokens: s.max_tokens,
        };
        let retrieval = self.services.index.is_some() && self.services.exemplars.is_some();
        match req.kind {
            RunKind::Ner => {
                let mode = req.mode.unwrap_or(ShotMode::FewShot { k: s.few_shot_k });
                if mode != ShotMode::ZeroShot && !retrieval {
                    return invalid("few-shot runs need an exemplar index");
                }
                config.model = Some(req.model.clone().unwrap_or_else(|| s.fine_tuned_model.clone()));
                config.mode = Some(mode);
            }
            RunKind::Recommend => {
                config.model = Some(req.model.clone().unwrap_or_else(|| s.fine_tuned_model.clone()));
                config.template_version = RECOMMEND_TEMPLATE_VERSION.into();
            }
            RunKind::Ablation => {
                if !retrieval {
                    return invalid("ablation runs need an exemplar index");
                }
                let models = req
                    .models
                    .clone()
                    .unwrap_or_else(|| ModelIds { baseline: s.baseline_model.clone(), fine_tuned: s.fine_tuned_model.clone() });
                let k = req.few_shot_k.unwrap_or(s.few_shot_k);
                ShotMode::few(k).map_err(WorkbenchError::InvalidConfig)?;
                config.grid = AblationConfig::canonical_grid(k)
                    .into_iter()
                    .map(|c| GridCell { slug: config_slug(&c), model: models.for_variant(c.model_variant).to_string(), config: c })
                    .collect();
            }
        }
        if config.model.as_deref().is_some_and(|m| m.trim().is_empty()) {
            return invalid("model id is empty");
        }
        Ok(config)
    }

    fn validate_items(&self, req: &CreateRunRequest) -> Result<(), WorkbenchError> {
        let invalid = |m: String| Err(WorkbenchError::InvalidConfig(m));
        if req.items.is_empty() {
            return invalid("item source is empty".into());
        }
        let mut seen = HashSet::new();
        for item in &req.items {
            let id = item.id();
            if !valid_source_id(id) {
                return invalid(format!("item id `{id}` must be 1-128 chars of [A-Za-z0-9._-]"));
            }
            if !seen.insert(id) {
                return invalid(format!("duplicate item id `{id}`"));
            }
            match (req.kind, item) {
                (RunKind::Ner | RunKind::Ablation, ItemInput::Ner { category, r#abstract, .. }) => {
                    if !category.is_ner() {
                        return invalid(format!("{category} is not a recognition category"));
                    }
                    if r#abstract.trim().is_empty() {
                        return invalid(format!("item `{id}` has an empty abstract"));
                    }
                }
                (RunKind::Recommend, ItemInput::Recommend { query, .. }) => {
                    if !query.is_valid() {
                        return invalid(format!("item `{id}` has an incomplete query"));
                    }
                }
                _ => return invalid(format!("item `{id}` does not match run kind")),
            }
        }
        Ok(())
    }

    /// Persists a run and its pending items; no backend is called. Returns the
    /// run and whether it was newly created (false when the idempotency key
    /// matched an existing run).
    pub fn create_run(&self, req: &CreateRunRequest) -> Result<(Run, bool), WorkbenchError> {
        if let Some(existing) = self.idempotent_run(req) {
            return Ok((existing, false));
        }
        self.validate_items(req)?;
        let config = self.snapshot(req)?;
        let created_at = self.services.clock.now();
        self.store.append_with(|p| {
            if let Some(run_id) = req.idempotency_key.as_ref().and_then(|k| p.idempotency.get(k)) {
                return Ok((None, (p.runs[run_id].clone(), false)));
            }
            let run_id = format!("run-{:06}", p.runs.len() + 1);
            let cells: Vec<Option<&GridCell>> =
                if config.grid.is_empty() { vec![None] } else { config.grid.iter().map(Some).collect() };
            let mut items = Vec::new();
            for cell in cells {
                for input in &req.items {
                    let (category, source) = match input {
                        ItemInput::Ner { category, r#abstract, .. } => (Some(*category), ItemSource::Abstract(r#abstract.clone())),
                        ItemInput::Recommend { query, .. } => (None, ItemSource::Query(query.clone())),
                    };
                    let item_id = match cell {
                        Some(c) => format!("{run_id}:{}:{}", c.slug, input.id()),
                        None => format!("{run_id}:{}", input.id()),
                    };
                    items.push(ReviewItem {
                        item_id,
                        run_id: run_id.clone(),
                        source_id: input.id().to_string(),
                        config: cell.map(|c| c.slug.clone()),
                        category,
                        source,
                        processed: false,
                        raw_text: None,
                        parsed: None,
                        llm_answer: Vec::new(),
                        exemplar_ids: Vec::new(),
                        error: None,
                        judgment_state: JudgmentState::Pending,
                        latest_judgment: None,
                    });
                }
            }
            let run = Run {
                run_id,
                kind: req.kind,
                config: config.clone(),
                item_ids: items.iter().map(|i| i.item_id.clone()).collect(),
                status: RunState::Running,
                created_at,
                finished_at: None,
                idempotency_key: req.idempotency_key.clone(),
                error: None,
            };
            Ok((Some(Event::RunCreated { run: run.clone(), items }), (run, true)))
        })
    }

    fn idempotent_run(&self, req: &CreateRunRequest) -> Option<Run> {
        let key = req.idempotency_key.as_ref()?;
        self.store.read(|p| p.idempotency.get(key).map(|id| p.runs[id].clone()))
    }

    /// Runs every unprocessed item of a run through its pipeline and marks
    /// the run finished. Safe to call again after a restart.
    pub fn execute_run(&self, run_id: &str) -> Result<Run, WorkbenchError> {
        let run = self.run(run_id)?;
        if run.status != RunState::Running {
            return Ok(run);
        }
        let items: Vec<ReviewItem> = self.store.read(|p| run.item_ids.iter().map(|id| p.items[id].clone()).collect());
        let todo: Vec<&ReviewItem> = items.iter().filter(|i| !i.processed).collect();
        match run.kind {
            RunKind::Ner | RunKind::Ablation => self.execute_ner(&run, &todo)?,
            RunKind::Recommend => self.execute_recommend(&run, &todo)?,
        }
        let failed = self.store.read(|p| run.item_ids.iter().filter(|id| p.items[*id].error.is_some()).count());
        let (status, error) = if failed == run.item_ids.len() {
            (RunState::Failed, Some("every item failed".to_string()))
        } else {
            (RunState::Complete, None)
        };
        let finished_at = self.services.clock.now();
        self.store.append_with(|_| Ok((Some(Event::RunFinished { run_id: run.run_id.clone(), status, finished_at, error }), ())))?;
        self.run(run_id)
    }

    fn ner_ports(&self) -> NerPorts<'_> {
        NerPorts {
            gateway: &self.services.gateway,
            embedder: self.services.embedder.as_ref(),
            index: self.services.index.as_deref(),
            exemplars: self.services.exemplars.as_deref(),
            clock: self.services.clock.as_ref(),
        }
    }

    fn execute_ner(&self, run: &Run, todo: &[&ReviewItem]) -> Result<(), WorkbenchError> {
        let mut cells: Vec<(Option<String>, String, ShotMode)> = Vec::new();
        if run.config.grid.is_empty() {
            cells.push((None, run.config.model.clone().unwrap_or_default(), run.config.mode.unwrap_or(ShotMode::ZeroShot)));
        } else {
            cells.extend(run.config.grid.iter().map(|c| (Some(c.slug.clone()), c.model.clone(), c.config.shot_mode)));
        }
        for (slug, model, mode) in cells {
            let batch: Vec<&ReviewItem> = todo.iter().copied().filter(|i| i.config == slug).collect();
            let inputs: Vec<ExtractionItem> = batch
                .iter()
                .map(|i| ExtractionItem {
                    item_id: i.item_id.clone(),
                    r#abstract: match &i.source {
                        ItemSource::Abstract(a) => a.clone(),
                        ItemSource::Query(q) => q.product.clone(),
                    },
                })
                .collect();
            let cfg = NerConfig { mode, model, temperature: run.config.temperature, max_tokens: run.config.max_tokens };
            let records = extract_batch(&inputs, &cfg, &self.ner_ports(), self.settings.max_in_flight);
            for (item, rec) in batch.iter().zip(records) {
                let llm_answer = match (&rec.parsed, item.category) {
                    (Some(p), Some(c)) => p.get(c).to_vec(),
                    _ => Vec::new(),
                };
                let event = Event::ItemProcessed {
                    item_id: item.item_id.clone(),
                    raw_text: rec.raw_text.clone(),
                    parsed: rec.parsed.clone().map(ParsedOutput::Entities),
                    llm_answer,
                    exemplar_ids: rec.exemplar_ids.clone(),
                    error: if rec.status == RunStatus::Ok { None } else { rec.error.clone() },
                };
                self.store.append_with(|_| Ok((Some(event), ())))?;
            }
        }
        Ok(())
    }

    fn execute_recommend(&self, run: &Run, todo: &[&ReviewItem]) -> Result<(), WorkbenchError> {
        let cfg = RecommendConfig {
            model: run.config.model.clone().unwrap_or_default(),
            temperature: run.config.temperature,
            max_tokens: run.config.max_tokens,
        };
        for item in todo {
            let ItemSource::Query(q) = &item.source else { continue };
            let event = match recommend(q, &cfg, &self.services.gateway) {
                Ok(answer) => Event::ItemProcessed {
                    item_id: item.item_id.clone(),
                    raw_text: Some(answer.raw_text.clone()),
                    llm_answer: if answer.recommended_material.is_empty() { vec![] } else { vec![answer.recommended_material.clone()] },
                    parsed: Some(ParsedOutput::Recommendation(answer)),
                    exemplar_ids: Vec::new(),
                    error: None,
                },
                Err(e) => Event::ItemProcessed {
                    item_id: item.item_id.clone(),
                    raw_text: None,
                    parsed: None,
                    llm_answer: Vec::new(),
                    exemplar_ids: Vec::new(),
                    error: Some(e.to_string()),
                },
            };
            self.store.append_with(|_| Ok((Some(event), ())))?;
        }
        Ok(())
    }

    /// Runs still marked running (e.g. interrupted by a restart).
    pub fn unfinished_runs(&self) -> Vec<String> {
        self.store.read(|p| p.runs.values().filter(|r| r.status == RunState::Running).map(|r| r.run_id.clone()).collect())
    }

    pub fn runs(&self) -> Vec<Run> {
        self.store.read(|p| p.runs.values().cloned().collect())
    }

    pub fn run(&self, run_id: &str) -> Result<Run, WorkbenchError> {
        self.store.read(|p| p.runs.get(run_id).cloned()).ok_or_else(|| WorkbenchError::UnknownRun(run_id.to_string()))
    }

    pub fn items(&self, run_id: &str, filter: ItemFilter, category: Option<EntityLabel>) -> Result<Vec<ReviewItem>, WorkbenchError> {
        let run = self.run(run_id)?;
        Ok(self.store.read(|p| {
            run.item_ids
                .iter()
                .map(|id| &p.items[id])
                .filter(|i| match filter {
                    ItemFilter::All => true,
                    ItemFilter::Pending => i.judgment_state == JudgmentState::Pending,
                    ItemFilter::Judged => i.judgment_state != JudgmentState::Pending,
                })
                .filter(|i| category.is_none() || i.category == category)
                .cloned()
                .collect()
        }))
    }

    pub fn item(&self, item_id: &str) -> Result<ReviewItem, WorkbenchError> {
        self.store.read(|p| p.items.get(item_id).cloned()).ok_or_else(|| WorkbenchError::UnknownItem(item_id.to_string()))
    }

    /// Every judgment ever submitted for an item, oldest first.
    pub fn audit(&self, item_id: &str) -> Result<Vec<JudgmentRecord>, WorkbenchError> {
        self.item(item_id)?;
        Ok(self.store.read(|p| p.audit.get(item_id).cloned().unwrap_or_default()))
    }

    /// Appends a judgment with the next version for the item.
    pub fn submit_judgment(&self, item_id: &str, judgment: Judgment, reviewer: &str) -> Result<JudgmentRecord, WorkbenchError> {
        let judged_at = self.services.clock.now();
        self.store.append_with(|p| {
            let item = p.items.get(item_id).ok_or_else(|| WorkbenchError::UnknownItem(item_id.to_string()))?;
            let run = &p.runs[&item.run_id];
            if run.status != RunState::Complete {
                return Err(WorkbenchError::RunNotComplete { run_id: run.run_id.clone(), status: run.status });
            }
            let version = p.audit.get(item_id).map_or(0, |a| a.iter().map(|r| r.version).max().unwrap_or(0)) + 1;
            let record = JudgmentRecord { item_id: item_id.to_string(), version, judgment, reviewer: reviewer.to_string(), judged_at };
            Ok((Some(Event::JudgmentSubmitted(record.clone())), record))
        })
    }

    /// Latest judgments of categorised items, grouped by ablation config.
    /// Item ids are the submitted source ids.
    pub fn judged_items(&self, run_id: &str) -> Result<BTreeMap<Option<String>, Vec<JudgedItem>>, WorkbenchError> {
        let mut out: BTreeMap<Option<String>, Vec<JudgedItem>> = BTreeMap::new();
        for item in self.items(run_id, ItemFilter::Judged, None)? {
            let (Some(category), Some(j)) = (item.category, item.latest_judgment) else { continue };
            out.entry(item.config).or_default().push(JudgedItem {
                item_id: item.source_id,
                category,
                llm_answer: item.llm_answer,
                judgment: j.judgment,
                judged_by: j.reviewer,
                judged_at: j.judged_at,
            });
        }
        Ok(out)
    }

    /// Per-category and overall metrics over judged items only, computed by
    /// the evaluation module on the current judgment set.
    pub fn metrics(&self, run_id: &str) -> Result<RunMetrics, WorkbenchError> {
        let run = self.run(run_id)?;
        let all = self.items(run_id, ItemFilter::All, None)?;
        let judged = self.judged_items(run_id)?;
        let slugs: Vec<Option<String>> = if run.config.grid.is_empty() {
            if run.kind == RunKind::Recommend { vec![] } else { vec![None] }
        } else {
            run.config.grid.iter().map(|c| Some(c.slug.clone())).collect()
        };
        let groups = slugs
            .into_iter()
            .map(|slug| {
                let judged_here = judged.get(&slug).map(Vec::as_slice).unwrap_or(&[]);
                let categories: Vec<CategoryStatus> = EntityLabel::NER
                    .iter()
                    .map(|&label| {
                        let of_label: Vec<JudgedItem> = judged_here.iter().filter(|j| j.category == label).cloned().collect();
                        let total = all.iter().filter(|i| i.config == slug && i.category == Some(label)).count() as u64;
                        let scored = score_category(&of_label, label);
                        CategoryStatus {
                            category: label,
                            judged: of_label.len() as u64,
                            pending: total - of_label.len() as u64,
                            modified_accuracy_percent: scored.as_ref().ok().map(CategoryMetrics::percent),
                            error: scored.as_ref().err().map(|e| match e {
                                EvalError::EmptyItemSet(_) => "EmptyItemSet".to_string(),
                                other => other.to_string(),
                            }),
                            metrics: scored.ok(),
                        }
                    })
                    .collect();
                let rows: Vec<CategoryMetrics> = categories.iter().filter_map(|c| c.metrics.clone()).collect();
                let overall = aggregate(&rows).ok();
                MetricsGroup { config: slug, overall_percent: overall.as_ref().map(CategoryMetrics::percent), overall, categories }
            })
            .collect();
        let judged_count = all.iter().filter(|i| i.judgment_state != JudgmentState::Pending).count() as u64;
        Ok(RunMetrics {
            run_id: run.run_id,
            status: run.status,
            judged: judged_count,
            pending: all.len() as u64 - judged_count,
            groups,
        })
    }

    /// The evaluation report for a NER run, or the ablation table for an
    /// ablation run, over the current judgments.
    pub fn report(&self, run_id: &str, format: ReportFormat) -> Result<String, WorkbenchError> {
        let run = self.run(run_id)?;
        let unavailable = |reason: String| WorkbenchError::ReportUnavailable { run_id: run_id.to_string(), reason };
        let judged = self.judged_items(run_id)?;
        match run.kind {
            RunKind::Recommend => Err(unavailable("recommendation runs have no category metrics".into())),
            RunKind::Ner => {
                let items = judged.get(&None).ok_or_else(|| unavailable("no judged items".into()))?;
                let report = evaluate(items).map_err(|e| unavailable(e.to_string()))?;
                Ok(match format {
                    ReportFormat::Table => render_evaluation_table(&report),
                    ReportFormat::Json => render_evaluation_json(&report),
                })
            }
            RunKind::Ablation => {
                let mut rows = Vec::new();
                for cell in &run.config.grid {
                    let items = judged.get(&Some(cell.slug.clone())).map(Vec::as_slice).unwrap_or(&[]);
                    rows.push(ablation_row(cell.config, &cell.model, items).map_err(|e| unavailable(format!("{}: {e}", cell.slug)))?);
                }
                canonical_order(&mut rows);
                let report = AblationReport { rows };
                Ok(match format {
                    ReportFormat::Table => render_ablation_table(&report),
                    ReportFormat::Json => render_ablation_json(&report),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::gateway::{ChatBackend, CompletionRequest, CompletionResponse, CountingBackend, FinishReason};
    use crate::index::HashEmbedder;

    fn echo_backend() -> Arc<dyn ChatBackend> {
        Arc::new(CountingBackend::new(|_: &CompletionRequest| {
            Ok(CompletionResponse {
                text: "MATERIAL: Cu\nPRODUCT: None".into(),
                finish_reason: FinishReason::Stop,
                latency_ms: 1,
                backend_id: "echo".into(),
            })
        }))
    }

    fn services() -> Services {
        Services {
            gateway: Arc::new(Gateway::new(echo_backend())),
            embedder: Arc::new(HashEmbedder),
            index: None,
            exemplars: None,
            clock: Arc::new(FixedClock::epoch()),
        }
    }

    fn workbench(store: Store) -> Workbench {
        Workbench::new(store, services(), WorkbenchConfig::default())
    }

    fn ner_request(n: usize) -> CreateRunRequest {
        let items = (0..n)
            .map(|i| ItemInput::Ner {
                item_id: format!("a{i}"),
                category: if i % 2 == 0 { EntityLabel::Material } else { EntityLabel::Product },
                r#abstract: format!("Cu electrode number {i} reduces CO2."),
            })
            .collect();
        let mut req = CreateRunRequest::ner(items);
        req.mode = Some(ShotMode::ZeroShot);
        req
    }

    const YES: Judgment = Judgment { answer_correct: true, entity_exists: true };
    const ABSENT: Judgment = Judgment { answer_correct: true, entity_exists: false };

    #[test]
    fn run_lifecycle_and_metrics() {
        let wb = workbench(Store::in_memory());
        let (run, created) = wb.create_run(&ner_request(4)).unwrap();
        assert!(created);
        assert_eq!(run.status, RunState::Running);
        assert_eq!(wb.items(&run.run_id, ItemFilter::Pending, None).unwrap().len(), 4);
        assert!(matches!(
            wb.submit_judgment(&run.item_ids[0], YES, "r"),
            Err(WorkbenchError::RunNotComplete { .. })
        ));

        let run = wb.execute_run(&run.run_id).unwrap();
        assert_eq!(run.status, RunState::Complete);
        let item = wb.item(&run.item_ids[0]).unwrap();
        assert_eq!(item.llm_answer, ["Cu"]);
        assert!(wb.item(&run.item_ids[1]).unwrap().llm_answer.is_empty());

        let m = wb.metrics(&run.run_id).unwrap();
        assert_eq!(m.pending, 4);
        assert!(m.groups[0].categories.iter().all(|c| c.error.as_deref() == Some("EmptyItemSet")));

        assert_eq!(wb.submit_judgment(&run.item_ids[0], YES, "r").unwrap().version, 1);
        assert_eq!(wb.submit_judgment(&run.item_ids[1], ABSENT, "r").unwrap().version, 1);
        let m = wb.metrics(&run.run_id).unwrap();
        let material = &m.groups[0].categories[0];
        assert_eq!((material.judged, material.pending), (1, 1));
        assert_eq!(m.groups[0].overall_percent.as_deref(), Some("100.00%"));
        assert!(wb.report(&run.run_id, ReportFormat::Table).unwrap().contains("OVERALL"));
    }

    #[test]
    fn idempotency_key_returns_existing_run() {
        let wb = workbench(Store::in_memory());
        let mut req = ner_request(2);
        req.idempotency_key = Some("k1".into());
        let (a, _) = wb.create_run(&req).unwrap();
        let (b, created) = wb.create_run(&req).unwrap();
        assert_eq!(a.run_id, b.run_id);
        assert!(!created);
        assert_eq!(wb.runs().len(), 1);
    }

    #[test]
    fn invalid_requests() {
        let wb = workbench(Store::in_memory());
        assert!(matches!(wb.create_run(&ner_request(0)), Err(WorkbenchError::InvalidConfig(_))));
        let mut few = ner_request(1);
        few.mode = Some(ShotMode::FewShot { k: 3 });
        assert!(matches!(wb.create_run(&few), Err(WorkbenchError::InvalidConfig(_))));
        let mut dup = ner_request(1);
        dup.items.push(dup.items[0].clone());
        assert!(wb.create_run(&dup).is_err());
        assert!(matches!(wb.submit_judgment("nope", YES, "r"), Err(WorkbenchError::UnknownItem(_))));
    }

    #[test]
    fn versions_and_audit() {
        let wb = workbench(Store::in_memory());
        let (run, _) = wb.create_run(&ner_request(1)).unwrap();
        wb.execute_run(&run.run_id).unwrap();
        let id = &run.item_ids[0];
        wb.submit_judgment(id, YES, "a").unwrap();
        wb.submit_judgment(id, Judgment { answer_correct: false, entity_exists: true }, "b").unwrap();
        assert_eq!(wb.item(id).unwrap().judgment_state, JudgmentState::Judged { version: 2 });
        assert_eq!(wb.audit(id).unwrap().len(), 2);
        assert_eq!(wb.metrics(&run.run_id).unwrap().groups[0].overall.as_ref().unwrap().correct, 0);
    }

    #[test]
    fn concurrent_judgments_keep_both_versions() {
        let wb = Arc::new(workbench(Store::in_memory()));
        let (run, _) = wb.create_run(&ner_request(1)).unwrap();
        wb.execute_run(&run.run_id).unwrap();
        let id = run.item_ids[0].clone();
        let handles: Vec<_> = ["alice", "bob"]
            .into_iter()
            .map(|who| {
                let (wb, id) = (wb.clone(), id.clone());
                std::thread::spawn(move || wb.submit_judgment(&id, YES, who).unwrap().version)
            })
            .collect();
        let mut versions: Vec<u32> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        versions.sort();
        assert_eq!(versions, [1, 2]);
        assert_eq!(wb.audit(&id).unwrap().len(), 2);
        assert_eq!(wb.item(&id).unwrap().judgment_state, JudgmentState::Judged { version: 2 });
    }

    #[test]
    fn judgments_survive_restart() {
        let dir = tempfile::tempdir().unwrap();
        let (run_id, item_id) = {
            let wb = workbench(Store::open(dir.path()).unwrap());
            let (run, _) = wb.create_run(&ner_request(2)).unwrap();
            wb.execute_run(&run.run_id).unwrap();
            wb.submit_judgment(&run.item_ids[0], YES, "r").unwrap();
            wb.submit_judgment(&run.item_ids[0], ABSENT, "r").unwrap();
            (run.run_id, run.item_ids[0].clone())
        };
        let wb = workbench(Store::open(dir.path()).unwrap());
        assert_eq!(wb.run(&run_id).unwrap().status, RunState::Complete);
        assert_eq!(wb.item(&item_id).unwrap().judgment_state, JudgmentState::Judged { version: 2 });
        assert_eq!(wb.audit(&item_id).unwrap().len(), 2);
    }

    #[test]
    fn torn_tail_is_ignored_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        {
            let wb = workbench(Store::open(dir.path()).unwrap());
            wb.create_run(&ner_request(1)).unwrap();
        }
        let path = dir.path().join(EVENT_LOG);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event\":\"judgment_sub").unwrap();
        drop(f);
        let wb = workbench(Store::open(dir.path()).unwrap());
        assert_eq!(wb.runs().len(), 1);
        drop(wb);
        fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(Store::open(dir.path()), Err(WorkbenchError::CorruptLog { line: 1, .. })));
    }

    #[test]
    fn item_input_json_shapes() {
        let ner: ItemInput = serde_json::from_str(r#"{"item_id":"x","category":"MATERIAL","abstract":"A"}"#).unwrap();
        assert!(matches!(ner, ItemInput::Ner { .. }));
        let rec: ItemInput = serde_json::from_str(
            r#"{"item_id":"y","query":{"product":"CO","material_category":"Single metal","control_method_type":"alloy"}}"#,
        )
        .unwrap();
        assert!(matches!(rec, ItemInput::Recommend { .. }));
    }
}
