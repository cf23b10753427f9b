//! Instruction-tuning dataset compilation.
//!
//! Two sample families: entity recognition (abstract → output grammar) and
//! catalyst recommendation (product, category, control method → material and
//! preparation). Samples are filtered, exact-deduplicated and emitted as JSON
//! lines next to a LoRA hyperparameter manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntityLabel, EntityRecord};
use crate::ingest::StructuredDocument;
use crate::rag::{
    gold_entities_by_doc, ner_user_message, parse_extraction, parse_recommendation, recommendation_input, AnswerStatus,
    NER_SYSTEM_PROMPT, RECOMMEND_INSTRUCTION,
};
use crate::text::{is_disallowed_control, sha256_hex};

pub const BUILDER_VERSION: &str = "builder-v1";
pub const MIN_OUTPUT_CHARS: usize = 10;
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus references unknown documents: {}", .0.join(", "))]
    UnresolvedDocId(Vec<String>),
    #[error("document {0} has no abstract")]
    MissingAbstract(String),
    #[error("process record {row}: {reason}")]
    InvalidProcessRecord { row: usize, reason: String },
    #[error("no samples to emit")]
    EmptyDataset,
    #[error("cannot write {path}: {message}")]
    DestinationUnwritable { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductYield {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faradaic_efficiency: Option<String>,
}

/// A structured electrocatalytic process extracted from one paper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessRecord {
    pub doc_id: String,
    pub material: String,
    pub control_method: String,
    /// Ordered by rank; the first entry is the primary product.
    pub products: Vec<ProductYield>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_setup: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electrolyte: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis_method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_density: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage: Option<String>,
}

impl ProcessRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.material.trim().is_empty() {
            return Err("material is empty".into());
        }
        if self.products.is_empty() || self.products.len() > 3 {
            return Err(format!("expected 1 to 3 products, found {}", self.products.len()));
        }
        if self.products.iter().any(|p| p.name.trim().is_empty()) {
            return Err("product name is empty".into());
        }
        Ok(())
    }

    pub fn primary_product(&self) -> &ProductYield {
        &self.products[0]
    }
}

/// Parses process records from JSON lines, rejecting invalid ones.
pub fn load_process_records(text: &str) -> Result<Vec<ProcessRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = i + 1;
        let rec: ProcessRecord =
            serde_json::from_str(line).map_err(|e| DatasetError::InvalidProcessRecord { row, reason: e.to_string() })?;
        rec.validate().map_err(|reason| DatasetError::InvalidProcessRecord { row, reason })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Ner,
    Recommend,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub builder_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstructionSample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub task_tag: TaskTag,
    pub provenance: Provenance,
}

impl InstructionSample {
    fn triple(&self) -> (&str, &str, &str) {
        (&self.instruction, &self.input, &self.output)
    }
}

pub const CATEGORY_SINGLE_METAL: &str = "Single metal";
pub const CATEGORY_METAL_OXIDE: &str = "Metal oxide";
pub const CATEGORY_ALLOY: &str = "Alloys/composites of two or more metals";
pub const CATEGORY_METAL_CARBON: &str = "Composites consisting of metal and carbon";

const METAL_NAMES: &[&str] = &[
    "copper", "gold", "silver", "palladium", "platinum", "tin", "bismuth", "zinc", "nickel", "cobalt", "iron", "indium",
    "lead", "molybdenum", "ruthenium", "rhodium", "iridium", "titanium", "manganese", "cadmium", "gallium", "antimony",
    "tungsten", "chromium", "cerium", "zirconium",
];
const METAL_SYMBOLS: &[&str] = &[
    "Cu", "Au", "Ag", "Pd", "Pt", "Sn", "Bi", "Zn", "Ni", "Co", "Fe", "In", "Pb", "Mo", "Ru", "Rh", "Ir", "Ti", "Mn", "Cd",
    "Ga", "Sb", "W", "Cr", "Ce", "Zr", "V", "Hg",
];
const CARBON_WORDS: &[&str] = &["carbon", "graphene", "graphite", "cnt", "cnts", "nanotube", "nanotubes", "g-c3n4"];

static FORMULA: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:[A-Z][a-z]?[0-9.]*)+$").unwrap());
static ELEMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Z][a-z]?").unwrap());

/// Maps materials to recommendation categories: an explicit vocabulary first,
/// then keyword rules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterialCategories {
    /// Lowercased material name → category.
    pub vocabulary: BTreeMap<String, String>,
}

impl MaterialCategories {
    pub fn with_vocabulary(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        MaterialCategories { vocabulary: entries.into_iter().map(|(m, c)| (m.trim().to_lowercase(), c)).collect() }
    }

    pub fn classify(&self, material: &str) -> Option<String> {
        if let Some(c) = self.vocabulary.get(&material.trim().to_lowercase()) {
            return Some(c.clone());
        }
        classify_by_keywords(material).map(str::to_string)
    }
}

/// Keyword fallback. Returns `None` when no metal is recognisable.
pub fn classify_by_keywords(material: &str) -> Option<&'static str> {
    let lower = material.to_lowercase();
    let mut metals: HashSet<&str> = HashSet::new();
    let mut has_oxygen = lower.contains("oxide");
    let mut has_carbon = false;
    for token in material.split(|c: char| !(c.is_alphanumeric() || c == '.')) {
        let t = token.trim_matches('.');
        let tl = t.to_lowercase();
        if let Some(i) = METAL_NAMES.iter().position(|n| *n == tl) {
            metals.insert(METAL_SYMBOLS[i]);
            continue;
        }
        if CARBON_WORDS.contains(&tl.as_str()) {
            has_carbon = true;
            continue;
        }
        if FORMULA.is_match(t) {
            for el in ELEMENT.find_iter(t) {
                match el.as_str() {
                    "O" => has_oxygen = true,
                    "C" => has_carbon = true,
                    s if METAL_SYMBOLS.contains(&s) => {
                        metals.insert(s);
                    }
                    _ => {}
                }
            }
        }
    }
    has_carbon |= CARBON_WORDS.iter().any(|w| lower.contains(w));
    if metals.is_empty() {
        return None;
    }
    Some(if has_oxygen {
        CATEGORY_METAL_OXIDE
    } else if has_carbon {
        CATEGORY_METAL_CARBON
    } else if metals.len() >= 2 || lower.contains("alloy") {
        CATEGORY_ALLOY
    } else {
        CATEGORY_SINGLE_METAL
    })
}

/// The answer text of a recommendation sample.
pub fn recommendation_output(r: &ProcessRecord) -> String {
    let product = r.primary_product();
    let mut out = format!(
        "The most suitable catalyst material for producing {} is {}. The control method that should be used is {}.",
        product.name.trim(),
        r.material.trim(),
        r.control_method.trim()
    );
    if let Some(s) = r.synthesis_method.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
        out.push_str(&format!(" It can be prepared by {s}."));
    }
    if let Some(fe) = product.faradaic_efficiency.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
        out.push_str(&format!(" It reaches a Faradaic efficiency of {fe} for {}", product.name.trim()));
        let conditions: Vec<String> = [("at", &r.voltage), ("in", &r.electrolyte), ("in a", &r.cell_setup)]
            .iter()
            .filter_map(|(p, v)| v.as_deref().map(str::trim).filter(|s| !s.is_empty()).map(|v| format!("{p} {v}")))
            .collect();
        for c in conditions {
            out.push(' ');
            out.push_str(&c);
        }
        out.push('.');
    }
    out
}

pub fn build_recommendation_samples(records: &[ProcessRecord], categories: &MaterialCategories) -> Vec<InstructionSample> {
    records
        .iter()
        .map(|r| InstructionSample {
            instruction: RECOMMEND_INSTRUCTION.to_string(),
            input: recommendation_input(
                &r.primary_product().name,
                categories.classify(&r.material).as_deref(),
                &r.control_method,
            ),
            output: recommendation_output(r),
            task_tag: TaskTag::Recommend,
            provenance: Provenance { doc_id: r.doc_id.clone(), builder_version: BUILDER_VERSION.into() },
        })
        .collect()
}

/// One sample per document that has at least one recognition-label record,
/// in document order.
pub fn build_ner_samples(corpus: &[EntityRecord], docs: &[StructuredDocument]) -> Result<Vec<InstructionSample>, DatasetError> {
    let known: HashSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    let mut unresolved: Vec<String> =
        corpus.iter().filter(|r| !known.contains(r.doc_id.as_str())).map(|r| r.doc_id.clone()).collect();
    if !unresolved.is_empty() {
        unresolved.sort();
        unresolved.dedup();
        return Err(DatasetError::UnresolvedDocId(unresolved));
    }
    let gold = gold_entities_by_doc(corpus);
    let mut out = Vec::new();
    for doc in docs {
        let Some(entities) = gold.get(&doc.doc_id) else { continue };
        let abstract_text = doc.meta.r#abstract.trim();
        if abstract_text.is_empty() {
            return Err(DatasetError::MissingAbstract(doc.doc_id.clone()));
        }
        out.push(InstructionSample {
            instruction: NER_SYSTEM_PROMPT.to_string(),
            input: ner_user_message(abstract_text),
            output: entities.to_grammar(),
            task_tag: TaskTag::Ner,
            provenance: Provenance { doc_id: doc.doc_id.clone(), builder_version: BUILDER_VERSION.into() },
        });
    }
    Ok(out)
}

/// Machine check that a sample's output follows its task grammar.
pub fn output_conforms(sample: &InstructionSample) -> bool {
    match sample.task_tag {
        TaskTag::Ner => {
            let lines: Vec<&str> = sample.output.lines().collect();
            lines.len() == EntityLabel::NER.len()
                && lines
                    .iter()
                    .zip(EntityLabel::NER)
                    .all(|(l, label)| l.starts_with(&format!("{}: ", label.display_name())))
                && parse_extraction(&sample.output).entities.to_grammar() == sample.output
        }
        TaskTag::Recommend => parse_recommendation(&sample.output).status == AnswerStatus::Parsed,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Duplicate { first_index: usize },
    EmptyOutput,
    OutputTooShort { chars: usize },
    ControlCharacters,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Drop {
    /// Position in the filter's input.
    pub index: usize,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub drops: Vec<Drop>,
}

impl DropReport {
    pub fn len(&self) -> usize {
        self.drops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drops.is_empty()
    }

    pub fn duplicates(&self) -> usize {
        self.drops.iter().filter(|d| matches!(d.reason, DropReason::Duplicate { .. })).count()
    }
}

fn cleanliness(s: &InstructionSample) -> Option<DropReason> {
    let out = s.output.trim();
    if out.is_empty() {
        return Some(DropReason::EmptyOutput);
    }
    let chars = out.chars().count();
    if chars < MIN_OUTPUT_CHARS {
        return Some(DropReason::OutputTooShort { chars });
    }
    if [&s.instruction, &s.input, &s.output].iter().any(|t| t.chars().any(is_disallowed_control)) {
        return Some(DropReason::ControlCharacters);
    }
    None
}

/// Drops unclean samples, then collapses exact (instruction, input, output)
/// duplicates onto their first occurrence. Order is preserved.
pub fn dedup_filter(samples: &[InstructionSample]) -> (Vec<InstructionSample>, DropReport) {
    let mut kept = Vec::new();
    let mut report = DropReport::default();
    let mut seen: HashMap<(&str, &str, &str), usize> = HashMap::new();
    for (index, s) in samples.iter().enumerate() {
        if let Some(reason) = cleanliness(s) {
            report.drops.push(Drop { index, reason });
            continue;
        }
        if let Some(&first_index) = seen.get(&s.triple()) {
            report.drops.push(Drop { index, reason: DropReason::Duplicate { first_index } });
            continue;
        }
        seen.insert(s.triple(), index);
        kept.push(s.clone());
    }
    (kept, report)
}

/// LoRA fine-tuning hyperparameters shipped with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub batch_size: u32,
    pub learning_rate: f64,
    pub lora_r: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub base_model: String,
    pub dataset_digest: String,
}

impl TrainingManifest {
    pub fn new(base_model: impl Into<String>) -> Self {
        TrainingManifest {
            batch_size: 10,
            learning_rate: 3e-4,
            lora_r: 8,
            lora_alpha: 32,
            lora_dropout: 0.1,
            base_model: base_model.into(),
            dataset_digest: String::new(),
        }
    }
}

#[derive(Serialize)]
struct DatasetLine<'a> {
    instruction: &'a str,
    input: &'a str,
    output: &'a str,
}

/// The dataset file contents: one `{instruction, input, output}` object per line.
pub fn render_dataset(samples: &[InstructionSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let line = DatasetLine { instruction: &s.instruction, input: &s.input, output: &s.output };
        out.push_str(&serde_json::to_string(&line).expect("sample serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedDataset {
    pub dataset_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: TrainingManifest,
}

/// Writes `dataset.jsonl` and `manifest.json` into `dest`. The manifest's
/// digest is the SHA-256 of the dataset file bytes.
pub fn emit_dataset(samples: &[InstructionSample], manifest: &TrainingManifest, dest: &Path) -> Result<EmittedDataset, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let unwritable = |path: &Path, e: std::io::Error| DatasetError::DestinationUnwritable { path: path.to_path_buf(), message: e.to_string() };
    fs::create_dir_all(dest).map_err(|e| unwritable(dest, e))?;
    let body = render_dataset(samples);
    let mut manifest = manifest.clone();
    manifest.dataset_digest = sha256_hex(&body);

    let dataset_path = dest.join(DATASET_FILE);
    fs::write(&dataset_path, &body).map_err(|e| unwritable(&dataset_path, e))?;
    let manifest_path = dest.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| unwritable(&manifest_path, e))?;
    Ok(EmittedDataset { dataset_path, manifest_path, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DocumentMeta;

    fn process(material: &str, control: &str, products: &[&str]) -> ProcessRecord {
        ProcessRecord {
            doc_id: "d1".into(),
            material: material.into(),
            control_method: control.into(),
            products: products.iter().map(|p| ProductYield { name: (*p).into(), faradaic_efficiency: None }).collect(),
            cell_setup: None,
            electrolyte: None,
            synthesis_method: None,
            current_density: None,
            voltage: None,
        }
    }

    fn doc(id: &str, abs: &str) -> StructuredDocument {
        StructuredDocument {
            doc_id: id.into(),
            meta: DocumentMeta { doc_id: id.into(), title: id.into(), r#abstract: abs.into(), journal: None, year: None, open_access: true },
            sections: Vec::new(),
        }
    }

    #[test]
    fn recommendation_sample_names_product_and_material() {
        let s = &build_recommendation_samples(&[process("Gold-Copper alloy", "Alloy", &["CO"])], &MaterialCategories::default())[0];
        assert!(s.input.contains("Target product: CO"));
        assert!(s.input.contains(CATEGORY_ALLOY));
        assert!(s.output.contains("Gold-Copper alloy"));
        assert_eq!(parse_recommendation(&s.output).recommended_material, "Gold-Copper alloy");
        assert!(output_conforms(s));
    }

    #[test]
    fn primary_product_is_rank_one() {
        let s = &build_recommendation_samples(&[process("Cu", "facet", &["C2H4", "C2H5OH", "CO"])], &MaterialCategories::default())[0];
        assert!(s.input.starts_with("Target product: C2H4\n"));
        assert!(!s.input.contains("C2H5OH"));
    }

    #[test]
    fn keyword_categories() {
        assert_eq!(classify_by_keywords("Cu nanowires"), Some(CATEGORY_SINGLE_METAL));
        assert_eq!(classify_by_keywords("Palladium (Pd)"), Some(CATEGORY_SINGLE_METAL));
        assert_eq!(classify_by_keywords("Cu2O"), Some(CATEGORY_METAL_OXIDE));
        assert_eq!(classify_by_keywords("tin oxide"), Some(CATEGORY_METAL_OXIDE));
        assert_eq!(classify_by_keywords("Gold-Copper alloy"), Some(CATEGORY_ALLOY));
        assert_eq!(classify_by_keywords("AuCu"), Some(CATEGORY_ALLOY));
        assert_eq!(classify_by_keywords("Cu on N-doped graphene"), Some(CATEGORY_METAL_CARBON));
        assert_eq!(classify_by_keywords("Copper"), Some(CATEGORY_SINGLE_METAL));
        assert_eq!(classify_by_keywords("N-doped carbon"), None);
        let vocab = MaterialCategories::with_vocabulary([("Mystery-X".to_string(), "Single metal".to_string())]);
        assert_eq!(vocab.classify("mystery-x").as_deref(), Some("Single metal"));
    }

    #[test]
    fn ner_sample_groups_records_per_doc() {
        let corpus = vec![
            EntityRecord::new("Cu", EntityLabel::Material, "Cu makes CO.", "d1"),
            EntityRecord::new("CO", EntityLabel::Product, "Cu makes CO.", "d1"),
        ];
        let docs = [doc("d1", "Cu makes CO."), doc("d2", "Nothing annotated here.")];
        let samples = build_ner_samples(&corpus, &docs).unwrap();
        assert_eq!(samples.len(), 1);
        let out = &samples[0].output;
        assert!(out.contains("MATERIAL: Cu\n"));
        assert!(out.contains("PRODUCT: CO\n"));
        assert_eq!(out.lines().filter(|l| l.ends_with(": None")).count(), 6);
        assert!(output_conforms(&samples[0]));
    }

    #[test]
    fn unresolved_doc_is_error() {
        let corpus = vec![EntityRecord::new("Cu", EntityLabel::Material, "Cu", "ghost")];
        assert!(matches!(build_ner_samples(&corpus, &[doc("d1", "x")]), Err(DatasetError::UnresolvedDocId(ids)) if ids == ["ghost"]));
    }

    fn sample(output: &str) -> InstructionSample {
        InstructionSample {
            instruction: "i".into(),
            input: "x".into(),
            output: output.into(),
            task_tag: TaskTag::Recommend,
            provenance: Provenance { doc_id: "d".into(), builder_version: BUILDER_VERSION.into() },
        }
    }

    #[test]
    fn dedup_collapses_and_reports() {
        let s = sample("a long enough output");
        let (kept, report) = dedup_filter(&[s.clone(), s.clone(), s.clone()]);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.duplicates(), 2);
        let (again, r2) = dedup_filter(&kept);
        assert_eq!(again, kept);
        assert!(r2.is_empty());
    }

    #[test]
    fn unclean_samples_are_dropped_with_reasons() {
        let (kept, report) = dedup_filter(&[sample(""), sample("short"), sample("has a \u{7} bell in it"), sample("fine output here")]);
        assert_eq!(kept.len(), 1);
        let reasons: Vec<_> = report.drops.iter().map(|d| d.reason.clone()).collect();
        assert_eq!(reasons, [DropReason::EmptyOutput, DropReason::OutputTooShort { chars: 5 }, DropReason::ControlCharacters]);
    }

    #[test]
    fn manifest_defaults() {
        let m = TrainingManifest::new("base");
        assert_eq!((m.batch_size, m.learning_rate, m.lora_r, m.lora_alpha, m.lora_dropout), (10, 3e-4, 8, 32, 0.1));
    }

    #[test]
    fn emit_writes_digest_of_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let e = emit_dataset(&[sample("fine output here")], &TrainingManifest::new("base"), dir.path()).unwrap();
        let body = fs::read(&e.dataset_path).unwrap();
        assert_eq!(String::from_utf8_lossy(&body).lines().count(), 1);
        assert_eq!(e.manifest.dataset_digest, sha256_hex(&body));
        let m: TrainingManifest = serde_json::from_slice(&fs::read(&e.manifest_path).unwrap()).unwrap();
        assert_eq!(m, e.manifest);
        assert!(matches!(emit_dataset(&[], &TrainingManifest::new("b"), dir.path()), Err(DatasetError::EmptyDataset)));
    }

    #[test]
    fn process_records_are_validated() {
        assert!(load_process_records(r#"{"doc_id":"d","material":"Cu","control_method":"x","products":[{"name":"CO"}]}"#).is_ok());
        assert!(matches!(
            load_process_records(r#"{"doc_id":"d","material":"","control_method":"x","products":[{"name":"CO"}]}"#),
            Err(DatasetError::InvalidProcessRecord { row: 1, .. })
        ));
    }
}
