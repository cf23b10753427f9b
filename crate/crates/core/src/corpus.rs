//! The annotated-entity corpus: label schema, CSV reader/writer, record
//! validation and per-label statistics.
//!
//! The corpus file is comma-separated UTF-8 with the header
//! `entity_text,label,rank,context_sentence,doc_id` and RFC 4180 quoting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize;

pub const CORPUS_HEADER: [&str; 5] = ["entity_text", "label", "rank", "context_sentence", "doc_id"];

/// Entity types of the standard corpus.
///
/// PRODUCT and FARADAIC_EFFICIENCY carry a rank (1..=3) for the second and
/// third product of a reaction; every other label is always rank 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityLabel {
    Material,
    ControlMethod,
    Product,
    FaradaicEfficiency,
    CellSetup,
    Electrolyte,
    SynthesisMethod,
    CurrentDensity,
    Voltage,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 9] = [
        EntityLabel::Material,
        EntityLabel::ControlMethod,
        EntityLabel::Product,
        EntityLabel::FaradaicEfficiency,
        EntityLabel::CellSetup,
        EntityLabel::Electrolyte,
        EntityLabel::SynthesisMethod,
        EntityLabel::CurrentDensity,
        EntityLabel::Voltage,
    ];

    /// The eight labels used for entity recognition, in report order.
    pub const NER: [EntityLabel; 8] = [
        EntityLabel::Material,
        EntityLabel::ControlMethod,
        EntityLabel::Product,
        EntityLabel::FaradaicEfficiency,
        EntityLabel::Electrolyte,
        EntityLabel::Voltage,
        EntityLabel::CurrentDensity,
        EntityLabel::CellSetup,
    ];

    /// Machine identifier, e.g. `FARADAIC_EFFICIENCY`.
    pub fn as_str(self) -> &'static str {
        match self {
            EntityLabel::Material => "MATERIAL",
            EntityLabel::ControlMethod => "CONTROL_METHOD",
            EntityLabel::Product => "PRODUCT",
            EntityLabel::FaradaicEfficiency => "FARADAIC_EFFICIENCY",
            EntityLabel::CellSetup => "CELL_SETUP",
            EntityLabel::Electrolyte => "ELECTROLYTE",
            EntityLabel::SynthesisMethod => "SYNTHESIS_METHOD",
            EntityLabel::CurrentDensity => "CURRENT_DENSITY",
            EntityLabel::Voltage => "VOLTAGE",
        }
    }

    /// Human-facing name used in prompts, the output grammar and reports.
    pub fn display_name(self) -> &'static str {
        match self {
            EntityLabel::Material => "MATERIAL",
            EntityLabel::ControlMethod => "CONTROL METHOD",
            EntityLabel::Product => "PRODUCT",
            EntityLabel::FaradaicEfficiency => "FARADAIC EFFICIENCY",
            EntityLabel::CellSetup => "CELL SETUP",
            EntityLabel::Electrolyte => "ELECTROLYTE",
            EntityLabel::SynthesisMethod => "SYNTHESIS METHOD",
            EntityLabel::CurrentDensity => "CURRENT DENSITY",
            EntityLabel::Voltage => "VOLTAGE",
        }
    }

    pub fn is_ner(self) -> bool {
        self != EntityLabel::SynthesisMethod
    }

    pub fn allows_rank(self, rank: u8) -> bool {
        match self {
            EntityLabel::Product | EntityLabel::FaradaicEfficiency => (1..=3).contains(&rank),
            _ => rank == 1,
        }
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown entity label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for EntityLabel {
    type Err = UnknownLabel;

    /// Accepts the machine identifier or the display name, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_uppercase() })
            .collect();
        EntityLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == key)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// One annotated entity with its context sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_text: String,
    pub label: EntityLabel,
    pub rank: u8,
    pub context_sentence: String,
    pub doc_id: String,
}

impl EntityRecord {
    pub fn new(
        entity_text: impl Into<String>,
        label: EntityLabel,
        context_sentence: impl Into<String>,
        doc_id: impl Into<String>,
    ) -> Self {
        EntityRecord {
            entity_text: entity_text.into(),
            label,
            rank: 1,
            context_sentence: context_sentence.into(),
            doc_id: doc_id.into(),
        }
    }

    pub fn with_rank(mut self, rank: u8) -> Self {
        self.rank = rank;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    EmptyEntityText,
    EmptyDocId,
    RankNotAllowed,
    SubstringMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::EmptyEntityText => "empty-entity-text",
            Violation::EmptyDocId => "empty-doc-id",
            Violation::RankNotAllowed => "rank-not-allowed",
            Violation::SubstringMismatch => "substring-mismatch",
        })
    }
}

/// Checks every record invariant and reports all violations, not only the first.
pub fn validate_record(r: &EntityRecord) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let entity = normalize(&r.entity_text);
    if entity.is_empty() {
        violations.push(Violation::EmptyEntityText);
    }
    if r.doc_id.trim().is_empty() {
        violations.push(Violation::EmptyDocId);
    }
    if !r.label.allows_rank(r.rank) {
        violations.push(Violation::RankNotAllowed);
    }
    // An empty entity is trivially "contained"; report the mismatch only when
    // there is something to look for, or when the context is itself empty.
    let context = normalize(&r.context_sentence);
    if context.is_empty() || (!entity.is_empty() && !context.contains(&entity)) {
        violations.push(Violation::SubstringMismatch);
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// A row that could not become a record. `row` counts data rows from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCorpus {
    pub records: Vec<EntityRecord>,
    pub rejects: Vec<RejectedRow>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus input is empty")]
    EmptyInput,
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Parses corpus CSV text. Malformed rows never abort the parse; they are
/// returned in the rejects report so that `records + rejects == rows`.
pub fn parse_corpus(input: &str) -> Result<ParsedCorpus, CorpusError> {
    if input.trim().is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(input.as_bytes());
    let headers = reader.headers()?.clone();
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(CORPUS_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))?;
    }

    let mut out = ParsedCorpus::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                out.rejects.push(RejectedRow { row: row_no, reason: format!("unreadable row: {e}") });
                continue;
            }
        };
        match record_from_row(&row, &columns) {
            Ok(record) => out.records.push(record),
            Err(reason) => out.rejects.push(RejectedRow { row: row_no, reason }),
        }
    }
    Ok(out)
}

fn record_from_row(row: &csv::StringRecord, columns: &[usize; 5]) -> Result<EntityRecord, String> {
    let field = |i: usize| row.get(columns[i]).ok_or_else(|| format!("missing field `{}`", CORPUS_HEADER[i]));
    let label: EntityLabel = field(1)?.parse().map_err(|e: UnknownLabel| e.to_string())?;
    let rank_text = field(2)?.trim();
    let rank = if rank_text.is_empty() {
        1
    } else {
        rank_text.parse::<u8>().map_err(|_| format!("invalid rank `{rank_text}`"))?
    };
    let record = EntityRecord {
        entity_text: field(0)?.to_string(),
        label,
        rank,
        context_sentence: field(3)?.to_string(),
        doc_id: field(4)?.to_string(),
    };
    validate_record(&record).map_err(|vs| {
        vs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    })?;
    Ok(record)
}

/// Writes records as corpus CSV (header always present).
pub fn emit_corpus(records: &[EntityRecord]) -> String {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer.write_record(CORPUS_HEADER).expect("write to Vec");
    for r in records {
        let rank = r.rank.to_string();
        writer
            .write_record([r.entity_text.as_str(), r.label.as_str(), &rank, &r.context_sentence, &r.doc_id])
            .expect("write to Vec");
    }
    let bytes = writer.into_inner().expect("flush to Vec");
    String::from_utf8(bytes).expect("csv output of UTF-8 input is UTF-8")
}

/// Per-label entity counts. Every label is present, zero or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_label: BTreeMap<EntityLabel, usize>,
    pub total: usize,
}

pub fn corpus_stats(records: &[EntityRecord]) -> CorpusStats {
    let mut per_label: BTreeMap<EntityLabel, usize> = EntityLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for r in records {
        *per_label.entry(r.label).or_default() += 1;
    }
    CorpusStats { total: per_label.values().sum(), per_label }
}

/// Returns the doc ids referenced by `records` that are not in `known`.
pub fn unresolved_doc_ids<'a>(records: &'a [EntityRecord], known: &HashSet<&str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    records
        .iter()
        .map(|r| r.doc_id.as_str())
        .filter(|id| !known.contains(id) && seen.insert(*id))
        .collect()
}
