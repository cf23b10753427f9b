//! Embedding port, fallback hash embedder, and an exact flat cosine index.
//!
//! Search is an exhaustive scan. Hits are ordered by score descending, then
//! chunk id ascending, so equal scores always rank the same way.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::text::{collapse_whitespace, sha256_hex};

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const FALLBACK_DIM: usize = 256;
pub const FALLBACK_MODEL_ID: &str = "fallback-hash-char3-256-v1";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector has non-finite entries")]
    NonFinite,
    #[error("chunk text is empty")]
    EmptyChunk,
    #[error("corrupt index file: {0}")]
    CorruptIndexFile(String),
    #[error("index format version {found} is not supported (expected {INDEX_FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl IndexError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IndexError::EmbedderUnavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, IndexError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    cosine_with_norms(a.values(), a.norm(), b.values(), b.norm())
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Text to fixed-dimension vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn model_id(&self) -> &str;
    fn embed_raw(&self, text: &str) -> Result<EmbeddingVector, IndexError>;
}

/// Embeds `text` through `port`, checking the declared dimension.
pub fn embed(text: &str, port: &dyn Embedder) -> Result<EmbeddingVector, IndexError> {
    if text.trim().is_empty() {
        return Err(IndexError::EmptyText);
    }
    let v = port.embed_raw(text)?;
    if v.dim() != port.dim() {
        return Err(IndexError::DimensionMismatch { expected: port.dim(), actual: v.dim() });
    }
    Ok(v)
}

/// Deterministic offline embedder: character 3-grams of the NFC-normalized,
/// lowercased, whitespace-collapsed text, hashed (FNV-1a) into 256 buckets and
/// L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl HashEmbedder {
    pub fn normalize(text: &str) -> String {
        collapse_whitespace(&text.nfc().collect::<String>()).to_lowercase()
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        FALLBACK_DIM
    }

    fn model_id(&self) -> &str {
        FALLBACK_MODEL_ID
    }

    fn embed_raw(&self, text: &str) -> Result<EmbeddingVector, IndexError> {
        let norm = Self::normalize(text);
        if norm.is_empty() {
            return Err(IndexError::EmptyText);
        }
        let chars: Vec<char> = norm.chars().collect();
        let mut v = vec![0.0f64; FALLBACK_DIM];
        let mut buf = String::new();
        let grams: Box<dyn Iterator<Item = &[char]>> =
            if chars.len() < 3 { Box::new(std::iter::once(&chars[..])) } else { Box::new(chars.windows(3)) };
        for gram in grams {
            buf.clear();
            buf.extend(gram);
            v[(fnv1a(buf.as_bytes()) % FALLBACK_DIM as u64) as usize] += 1.0;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= n;
        }
        EmbeddingVector::new(v)
    }
}

/// Embedding backend speaking the `{model, input}` → `{data:[{embedding}]}` HTTP shape.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    dim: usize,
    token: Option<String>,
}

impl std::fmt::Debug for HttpEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dim", &self.dim)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: [&'a str; 1],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize, token: Option<String>) -> Result<Self, IndexError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| IndexError::EmbedderUnavailable(e.to_string()))?;
        Ok(HttpEmbedder { client, endpoint: endpoint.into(), model: model.into(), dim, token })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed_raw(&self, text: &str) -> Result<EmbeddingVector, IndexError> {
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest { model: &self.model, input: [text] });
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| IndexError::EmbedderUnavailable(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(IndexError::EmbedderUnavailable(format!("embedding endpoint returned {status}")));
        }
        let body: EmbedResponse = resp.json().map_err(|e| IndexError::EmbedderUnavailable(e.without_url().to_string()))?;
        let first = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| IndexError::EmbedderUnavailable("response has no embeddings".into()))?;
        EmbeddingVector::new(first.embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
}

/// Read access needed by retrieval; lets callers instrument or substitute the index.
pub trait VectorSearch: Send + Sync {
    fn dim(&self) -> usize;
    fn search_topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError>;
    fn chunk(&self, chunk_id: &str) -> Option<IndexedChunk>;
}

struct Entry {
    chunk: IndexedChunk,
    norm: f64,
}

/// Exact flat index. Many readers, one writer; an upsert becomes visible
/// atomically once it completes.
pub struct FlatIndex {
    dim: usize,
    entries: RwLock<BTreeMap<String, Entry>>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        FlatIndex { dim, entries: RwLock::new(BTreeMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upsert(&self, chunk: IndexedChunk) -> Result<(), IndexError> {
        if chunk.vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, actual: chunk.vector.dim() });
        }
        if chunk.text.trim().is_empty() {
            return Err(IndexError::EmptyChunk);
        }
        let norm = chunk.vector.norm();
        self.entries.write().insert(chunk.chunk_id.clone(), Entry { chunk, norm });
        Ok(())
    }

    /// All chunks in chunk-id order.
    pub fn chunks(&self) -> Vec<IndexedChunk> {
        self.entries.read().values().map(|e| e.chunk.clone()).collect()
    }

    /// Writes the index as a header line followed by one JSON chunk per line.
    /// The header carries a SHA-256 of the body so truncation is detected on load.
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let entries = self.entries.read();
        let mut body = String::new();
        for e in entries.values() {
            body.push_str(&serde_json::to_string(&e.chunk).expect("chunk serializes"));
            body.push('\n');
        }
        let header = IndexHeader {
            format_version: INDEX_FORMAT_VERSION,
            dim: self.dim,
            count: entries.len(),
            checksum: sha256_hex(body.as_bytes()),
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            writeln!(f, "{}", serde_json::to_string(&header).expect("header serializes"))?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| IndexError::CorruptIndexFile("not UTF-8".into()))?;
        let (header_line, body) = text
            .split_once('\n')
            .ok_or_else(|| IndexError::CorruptIndexFile("missing header".into()))?;
        let header: IndexHeader = serde_json::from_str(header_line)
            .map_err(|e| IndexError::CorruptIndexFile(format!("bad header: {e}")))?;
        if header.format_version != INDEX_FORMAT_VERSION {
            return Err(IndexError::VersionMismatch { found: header.format_version });
        }
        if sha256_hex(body.as_bytes()) != header.checksum {
            return Err(IndexError::CorruptIndexFile("checksum mismatch".into()));
        }
        let index = FlatIndex::new(header.dim);
        for line in body.lines() {
            let chunk: IndexedChunk =
                serde_json::from_str(line).map_err(|e| IndexError::CorruptIndexFile(format!("bad chunk: {e}")))?;
            index.upsert(chunk)?;
        }
        if index.len() != header.count {
            return Err(IndexError::CorruptIndexFile(format!(
                "header declares {} chunks, found {}",
                header.count,
                index.len()
            )));
        }
        Ok(index)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format_version: u32,
    dim: usize,
    count: usize,
    checksum: String,
}

/// Sort order for hits: score descending, then chunk id ascending.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

impl VectorSearch for FlatIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Exact top-k by cosine similarity. An empty index yields no hits.
    fn search_topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, actual: query.dim() });
        }
        let qn = query.norm();
        let entries = self.entries.read();
        let mut hits: Vec<SearchHit> = entries
            .values()
            .map(|e| SearchHit {
                chunk_id: e.chunk.chunk_id.clone(),
                score: cosine_with_norms(query.values(), qn, e.chunk.vector.values(), e.norm),
            })
            .collect();
        drop(entries);
        hits.sort_by(hit_order);
        hits.truncate(k);
        Ok(hits)
    }

    fn chunk(&self, chunk_id: &str) -> Option<IndexedChunk> {
        self.entries.read().get(chunk_id).map(|e| e.chunk.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(dim: usize, i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        EmbeddingVector::new(v).unwrap()
    }

    fn chunk(id: &str, text: &str, vector: EmbeddingVector) -> IndexedChunk {
        IndexedChunk { chunk_id: id.into(), doc_id: id.into(), text: text.into(), vector }
    }

    #[test]
    fn fallback_embedder_is_deterministic_and_normalized() {
        let a = embed("abc", &HashEmbedder).unwrap();
        let b = embed("abc", &HashEmbedder).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a.dim(), FALLBACK_DIM);
    }

    #[test]
    fn fallback_normalizes_case_and_whitespace() {
        assert_eq!(embed("CO2", &HashEmbedder).unwrap(), embed("CO2 ", &HashEmbedder).unwrap());
        assert_eq!(embed("Cu  foam", &HashEmbedder).unwrap(), embed("cu foam", &HashEmbedder).unwrap());
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(embed("", &HashEmbedder), Err(IndexError::EmptyText)));
        assert!(matches!(embed("  \n", &HashEmbedder), Err(IndexError::EmptyText)));
    }

    struct WrongDim;
    impl Embedder for WrongDim {
        fn dim(&self) -> usize {
            4
        }
        fn model_id(&self) -> &str {
            "wrong"
        }
        fn embed_raw(&self, _: &str) -> Result<EmbeddingVector, IndexError> {
            EmbeddingVector::new(vec![1.0; 3])
        }
    }

    #[test]
    fn embedder_dimension_is_checked() {
        assert!(matches!(embed("x", &WrongDim), Err(IndexError::DimensionMismatch { expected: 4, actual: 3 })));
    }

    #[test]
    fn self_similarity_is_top_hit() {
        let idx = FlatIndex::new(FALLBACK_DIM);
        let v = embed("Cu nanowires reduce CO2 to ethylene", &HashEmbedder).unwrap();
        idx.upsert(chunk("a", "Cu nanowires", v.clone())).unwrap();
        idx.upsert(chunk("b", "Ag foam", embed("Ag foam makes CO", &HashEmbedder).unwrap())).unwrap();
        let hits = idx.search_topk(&v, 1).unwrap();
        assert_eq!(hits[0].chunk_id, "a");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upsert_replaces_same_id() {
        let idx = FlatIndex::new(3);
        idx.upsert(chunk("a", "first", basis(3, 0))).unwrap();
        idx.upsert(chunk("a", "second", basis(3, 1))).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.chunk("a").unwrap().text, "second");
    }

    #[test]
    fn upsert_checks_dimension() {
        let idx = FlatIndex::new(3);
        assert!(matches!(idx.upsert(chunk("a", "t", basis(4, 0))), Err(IndexError::DimensionMismatch { .. })));
    }

    #[test]
    fn orthogonal_score_is_exactly_zero() {
        let idx = FlatIndex::new(3);
        idx.upsert(chunk("a", "t", basis(3, 0))).unwrap();
        let hits = idx.search_topk(&basis(3, 1), 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].score, 0.0);
    }

    #[test]
    fn empty_index_returns_no_hits() {
        let idx = FlatIndex::new(3);
        assert!(idx.search_topk(&basis(3, 0), 3).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_chunk_id() {
        let idx = FlatIndex::new(2);
        for id in ["c", "a", "b"] {
            idx.upsert(chunk(id, "t", basis(2, 0))).unwrap();
        }
        let ids: Vec<_> = idx.search_topk(&basis(2, 0), 3).unwrap().into_iter().map(|h| h.chunk_id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn cosine_is_symmetric() {
        let a = embed("formate on Sn", &HashEmbedder).unwrap();
        let b = embed("formic acid on tin oxide", &HashEmbedder).unwrap();
        assert!((cosine(&a, &b) - cosine(&b, &a)).abs() <= 1e-12);
    }

    #[test]
    fn persist_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.jsonl");
        let idx = FlatIndex::new(FALLBACK_DIM);
        for (i, t) in ["Cu oxide", "Ag nanoparticles", "Bi nanosheets for formate"].iter().enumerate() {
            idx.upsert(chunk(&format!("c{i}"), t, embed(t, &HashEmbedder).unwrap())).unwrap();
        }
        idx.persist(&path).unwrap();
        let loaded = FlatIndex::load(&path).unwrap();
        let q = embed("copper oxide", &HashEmbedder).unwrap();
        assert_eq!(idx.search_topk(&q, 3).unwrap(), loaded.search_topk(&q, 3).unwrap());

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(FlatIndex::load(&path), Err(IndexError::CorruptIndexFile(_))));

        let text = String::from_utf8(bytes).unwrap().replacen("\"format_version\":1", "\"format_version\":9", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(FlatIndex::load(&path), Err(IndexError::VersionMismatch { found: 9 })));
    }
}
