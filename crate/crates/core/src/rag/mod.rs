//! Retrieval-augmented entity extraction.
//!
//! retrieve → assemble → complete → parse, with every run producing a
//! [`RunRecord`] that carries its provenance whether or not it succeeded.

mod grammar;
mod prompt;
mod recommend;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grammar::{parse_extraction, EntityLists, ExtractionResult};
pub use prompt::{
    assemble_ner_prompt, assemble_recommendation_prompt, ner_user_message, recommendation_input,
    recommendation_user_message, render_messages, Exemplar, NerPromptBundle, PromptError, RecommendationQuery, ShotMode,
    DEFAULT_FEW_SHOT_K, MAX_FEW_SHOT_K, NER_SYSTEM_PROMPT, NER_TEMPLATE_VERSION, RECOMMEND_INSTRUCTION,
    RECOMMEND_SYSTEM_PROMPT, RECOMMEND_TEMPLATE_VERSION,
};
pub use recommend::{parse_recommendation, recommend, split_sentences, AnswerStatus, RecommendConfig, RecommendationAnswer};

use crate::clock::Clock;
use crate::corpus::EntityRecord;
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::index::{embed, Embedder, FlatIndex, IndexError, IndexedChunk, VectorSearch};
use crate::ingest::StructuredDocument;
use crate::text::{normalize, sha256_hex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("few-shot mode needs a retrieval index and exemplar store")]
    MissingRetrieval,
    #[error("exemplar store: {0}")]
    Store(String),
}

/// A gold exemplar as stored on disk: the indexed chunk text plus the
/// abstract and gold entities that get rendered into prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredExemplar {
    pub chunk_id: String,
    pub doc_id: String,
    /// Title, abstract and annotated process description, as embedded.
    pub chunk_text: String,
    pub exemplar_text: String,
    pub exemplar_entities: EntityLists,
}

impl StoredExemplar {
    pub fn to_exemplar(&self) -> Exemplar {
        Exemplar {
            chunk_id: self.chunk_id.clone(),
            exemplar_text: self.exemplar_text.clone(),
            exemplar_entities: self.exemplar_entities.clone(),
        }
    }
}

/// Chunk id → gold exemplar.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExemplarStore {
    entries: BTreeMap<String, StoredExemplar>,
}

impl ExemplarStore {
    pub fn new() -> Self {
        ExemplarStore::default()
    }

    pub fn insert(&mut self, e: StoredExemplar) {
        self.entries.insert(e.chunk_id.clone(), e);
    }

    pub fn get(&self, chunk_id: &str) -> Option<&StoredExemplar> {
        self.entries.get(chunk_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredExemplar> {
        self.entries.values()
    }

    /// Reads one JSON exemplar per line.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Store(format!("{}: {e}", path.display())))?;
        let mut store = ExemplarStore::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: StoredExemplar = serde_json::from_str(line)
                .map_err(|err| PipelineError::Store(format!("{}:{}: {err}", path.display(), i + 1)))?;
            store.insert(e);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(e).expect("exemplar serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| PipelineError::Store(format!("{}: {e}", path.display())))
    }

    /// Embeds every chunk text into a fresh flat index.
    pub fn build_index(&self, embedder: &dyn Embedder) -> Result<FlatIndex, IndexError> {
        let index = FlatIndex::new(embedder.dim());
        for e in self.entries.values() {
            index.upsert(IndexedChunk {
                chunk_id: e.chunk_id.clone(),
                doc_id: e.doc_id.clone(),
                text: e.chunk_text.clone(),
                vector: embed(&e.chunk_text, embedder)?,
            })?;
        }
        Ok(index)
    }
}

/// Gold entity lists per document, from corpus records. Products and their
/// efficiencies are ordered by rank; synthesis methods are not recognition
/// labels and are skipped.
pub fn gold_entities_by_doc(corpus: &[EntityRecord]) -> BTreeMap<String, EntityLists> {
    let mut sorted: Vec<&EntityRecord> = corpus.iter().filter(|r| r.label.is_ner()).collect();
    sorted.sort_by_key(|r| r.rank);
    let mut out: BTreeMap<String, EntityLists> = BTreeMap::new();
    for r in sorted {
        out.entry(r.doc_id.clone()).or_default().push(r.label, r.entity_text.trim());
    }
    out
}

/// One exemplar per annotated document: chunk text is title, abstract and the
/// optional process description joined by blank lines.
pub fn build_exemplar_store(
    corpus: &[EntityRecord],
    docs: &[StructuredDocument],
    process_descriptions: &HashMap<String, String>,
) -> ExemplarStore {
    let gold = gold_entities_by_doc(corpus);
    let mut store = ExemplarStore::new();
    for doc in docs {
        let Some(entities) = gold.get(&doc.doc_id) else { continue };
        if doc.meta.r#abstract.trim().is_empty() {
            continue;
        }
        let mut parts = vec![doc.meta.title.trim(), doc.meta.r#abstract.trim()];
        if let Some(p) = process_descriptions.get(&doc.doc_id) {
            parts.push(p.trim());
        }
        store.insert(StoredExemplar {
            chunk_id: doc.doc_id.clone(),
            doc_id: doc.doc_id.clone(),
            chunk_text: parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join("\n\n"),
            exemplar_text: doc.meta.r#abstract.trim().to_string(),
            exemplar_entities: entities.clone(),
        });
    }
    store
}

/// Up to `k` nearest exemplars in similarity order. A candidate whose chunk
/// or exemplar text equals the query abstract is skipped, as are index hits
/// with no stored exemplar.
pub fn retrieve_exemplars(
    r#abstract: &str,
    k: usize,
    index: &dyn VectorSearch,
    embedder: &dyn Embedder,
    store: &ExemplarStore,
) -> Result<Vec<Exemplar>, PipelineError> {
    if store.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let query = embed(r#abstract, embedder)?;
    let target = normalize(r#abstract);
    let mut want = k + 1;
    loop {
        let hits = index.search_topk(&query, want)?;
        let exhausted = hits.len() < want;
        let picked: Vec<Exemplar> = hits
            .iter()
            .filter_map(|h| store.get(&h.chunk_id))
            .filter(|e| normalize(&e.chunk_text) != target && normalize(&e.exemplar_text) != target)
            .take(k)
            .map(StoredExemplar::to_exemplar)
            .collect();
        if picked.len() == k || exhausted {
            return Ok(picked);
        }
        want *= 2;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerConfig {
    pub mode: ShotMode,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl NerConfig {
    pub fn new(model: impl Into<String>, mode: ShotMode) -> Self {
        NerConfig { mode, model: model.into(), temperature: 0.0, max_tokens: 512 }
    }
}

/// Everything the extraction pipeline talks to.
#[derive(Clone, Copy)]
pub struct NerPorts<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn Embedder,
    pub index: Option<&'a dyn VectorSearch>,
    pub exemplars: Option<&'a ExemplarStore>,
    pub clock: &'a dyn Clock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Provenance and outcome of one extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub status: RunStatus,
    pub abstract_digest: String,
    pub prompt_digest: Option<String>,
    pub exemplar_ids: Vec<String>,
    pub template_version: String,
    pub model: String,
    pub mode: ShotMode,
    pub raw_text: Option<String>,
    pub parsed: Option<ExtractionResult>,
    pub error: Option<String>,
    pub latency_ms: Option<u64>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunRecord {
    pub fn result(&self) -> Option<&ExtractionResult> {
        self.parsed.as_ref()
    }
}

/// Digest of a rendered prompt (messages only, independent of model).
pub fn prompt_digest(bundle: &NerPromptBundle) -> String {
    sha256_hex(serde_json::to_string(&bundle.rendered).expect("messages serialize"))
}

/// Runs one abstract through the pipeline. Failures are recorded on the
/// returned record; no result is fabricated.
pub fn extract_entities(item_id: &str, r#abstract: &str, cfg: &NerConfig, ports: &NerPorts<'_>) -> RunRecord {
    let started_at = ports.clock.now();
    let mut record = RunRecord {
        item_id: item_id.to_string(),
        status: RunStatus::Failed,
        abstract_digest: sha256_hex(r#abstract),
        prompt_digest: None,
        exemplar_ids: Vec::new(),
        template_version: NER_TEMPLATE_VERSION.to_string(),
        model: cfg.model.clone(),
        mode: cfg.mode,
        raw_text: None,
        parsed: None,
        error: None,
        latency_ms: None,
        started_at,
        finished_at: started_at,
    };
    if let Err(e) = run_extraction(r#abstract, cfg, ports, &mut record) {
        tracing::warn!(item_id, error = %e, "extraction failed");
        record.error = Some(e.to_string());
    }
    record.finished_at = ports.clock.now();
    record
}

fn run_extraction(r#abstract: &str, cfg: &NerConfig, ports: &NerPorts<'_>, record: &mut RunRecord) -> Result<(), PipelineError> {
    let exemplars = match cfg.mode {
        ShotMode::ZeroShot => Vec::new(),
        ShotMode::FewShot { k } => {
            let (Some(index), Some(store)) = (ports.index, ports.exemplars) else {
                return Err(PipelineError::MissingRetrieval);
            };
            retrieve_exemplars(r#abstract, k, index, ports.embedder, store)?
        }
    };
    record.exemplar_ids = exemplars.iter().map(|e| e.chunk_id.clone()).collect();
    let bundle = assemble_ner_prompt(r#abstract, &exemplars, cfg.mode)?;
    record.prompt_digest = Some(prompt_digest(&bundle));

    let mut req = CompletionRequest::new(cfg.model.clone(), bundle.rendered);
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req.request_tag = format!("ner:{}", record.item_id);
    let resp = ports.gateway.complete(&req)?;

    record.latency_ms = Some(resp.latency_ms);
    record.parsed = Some(parse_extraction(&resp.text));
    record.raw_text = Some(resp.text);
    record.status = RunStatus::Ok;
    Ok(())
}

/// An abstract to extract from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionItem {
    pub item_id: String,
    pub r#abstract: String,
}

/// Extracts a batch on up to `workers` threads. Output order equals input order.
pub fn extract_batch(items: &[ExtractionItem], cfg: &NerConfig, ports: &NerPorts<'_>, workers: usize) -> Vec<RunRecord> {
    let workers = workers.clamp(1, items.len().max(1));
    let mut slots: Vec<Option<RunRecord>> = vec![None; items.len()];
    std::thread::scope(|scope| {
        let chunk = items.len().div_ceil(workers).max(1);
        for (item_chunk, slot_chunk) in items.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (item, slot) in item_chunk.iter().zip(slot_chunk) {
                    *slot = Some(extract_entities(&item.item_id, &item.r#abstract, cfg, ports));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Writes run records as JSON lines.
pub fn write_run_records(path: &Path, records: &[RunRecord]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    f.sync_all()
}
