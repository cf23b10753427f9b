//! Tagged-span ingestion: turns per-page text spans produced by an external
//! PDF extractor into cleaned, section-structured documents.
//!
//! Headings are spans whose font is at least 1.5pt larger than the modal body
//! font, or bold spans of at most 12 words. Lines that repeat on at least 60% of
//! pages (running headers, footers, page numbers) are dropped.

use std::collections::{BTreeMap, HashMap, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{collapse_whitespace, is_disallowed_control};

pub const DEFAULT_RULE_SET_ID: &str = "default-v1";
pub const HEADING_SIZE_DELTA: f64 = 1.5;
pub const HEADING_MAX_BOLD_WORDS: usize = 12;
pub const DEFAULT_REPEATED_LINE_PERCENT: u32 = 60;
pub const DEFAULT_MIN_PARAGRAPH_CHARS: u32 = 20;

/// Upper bound on cleaning passes; the default rules settle in two.
const MAX_CLEANING_PASSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub text: String,
    pub font_size: f64,
    pub bold: bool,
    pub y_order: u32,
}

/// Raw extractor output: one document, pages in order, spans in reading order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSpanDocument {
    pub doc_id: String,
    pub pages: Vec<Vec<Span>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    RegexDelete,
    RegexReplace,
    RepeatedLineDrop,
    MinLengthDrop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningRule {
    pub rule_id: String,
    pub kind: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u32>,
}

impl CleaningRule {
    pub fn delete(id: &str, pattern: &str) -> Self {
        CleaningRule {
            rule_id: id.into(),
            kind: RuleKind::RegexDelete,
            pattern: Some(pattern.into()),
            replacement: None,
            threshold: None,
        }
    }

    pub fn replace(id: &str, pattern: &str, replacement: &str) -> Self {
        CleaningRule {
            rule_id: id.into(),
            kind: RuleKind::RegexReplace,
            pattern: Some(pattern.into()),
            replacement: Some(replacement.into()),
            threshold: None,
        }
    }

    pub fn min_length(id: &str, chars: u32) -> Self {
        CleaningRule { rule_id: id.into(), kind: RuleKind::MinLengthDrop, pattern: None, replacement: None, threshold: Some(chars) }
    }

    pub fn repeated_line(id: &str, percent: u32) -> Self {
        CleaningRule {
            rule_id: id.into(),
            kind: RuleKind::RepeatedLineDrop,
            pattern: None,
            replacement: None,
            threshold: Some(percent),
        }
    }
}

/// Ordered cleaning rules. Order is semantic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningRuleSet {
    pub id: String,
    pub rules: Vec<CleaningRule>,
}

impl Default for CleaningRuleSet {
    fn default() -> Self {
        CleaningRuleSet {
            id: DEFAULT_RULE_SET_ID.into(),
            rules: vec![
                CleaningRule::replace("ligature-ff", "\u{fb00}", "ff"),
                CleaningRule::replace("ligature-fi", "\u{fb01}", "fi"),
                CleaningRule::replace("ligature-fl", "\u{fb02}", "fl"),
                CleaningRule::replace("ligature-ffi", "\u{fb03}", "ffi"),
                CleaningRule::replace("ligature-ffl", "\u{fb04}", "ffl"),
                CleaningRule::delete("control-chars", r"[\p{Cc}&&[^\t\n\r]]"),
                CleaningRule::delete("format-chars", r"\p{Cf}"),
                CleaningRule::delete("replacement-char", "\u{fffd}"),
                CleaningRule::delete("numeric-citations", r"\s*\[\d+(?:\s*[,\u{2013}-]\s*\d+)*\]"),
                CleaningRule::replace("collapse-whitespace", r"\s+", " "),
                CleaningRule::delete("trim", r"^\s+|\s+$"),
                CleaningRule::repeated_line("running-headers", DEFAULT_REPEATED_LINE_PERCENT),
                CleaningRule::min_length("min-length", DEFAULT_MIN_PARAGRAPH_CHARS),
            ],
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed span stream: {0}")]
    MalformedSpanStream(String),
    #[error("document `{0}` is empty after cleaning")]
    EmptyAfterCleaning(String),
    #[error("rule `{rule_id}`: invalid pattern: {message}")]
    InvalidRulePattern { rule_id: String, message: String },
    #[error("rule set: {0}")]
    InvalidRuleSet(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

enum CompiledStep {
    Regex { re: Regex, replacement: String },
    MinLength(usize),
}

/// A rule set with its patterns compiled; build once per batch.
pub struct CompiledRules {
    id: String,
    steps: Vec<CompiledStep>,
    repeated_line_percent: Option<u32>,
}

impl CompiledRules {
    pub fn new(rules: &CleaningRuleSet) -> Result<Self, IngestError> {
        let mut ids = HashSet::new();
        let mut steps = Vec::new();
        let mut repeated_line_percent = None;
        for rule in &rules.rules {
            if !ids.insert(rule.rule_id.as_str()) {
                return Err(IngestError::InvalidRuleSet(format!("duplicate rule_id `{}`", rule.rule_id)));
            }
            let missing = |what: &str| IngestError::InvalidRuleSet(format!("rule `{}` needs a {what}", rule.rule_id));
            match rule.kind {
                RuleKind::RegexDelete | RuleKind::RegexReplace => {
                    let pattern = rule.pattern.as_deref().ok_or_else(|| missing("pattern"))?;
                    let re = Regex::new(pattern).map_err(|e| IngestError::InvalidRulePattern {
                        rule_id: rule.rule_id.clone(),
                        message: e.to_string(),
                    })?;
                    let replacement = if rule.kind == RuleKind::RegexReplace {
                        rule.replacement.clone().ok_or_else(|| missing("replacement"))?
                    } else {
                        String::new()
                    };
                    steps.push(CompiledStep::Regex { re, replacement });
                }
                RuleKind::MinLengthDrop => {
                    let n = rule.threshold.ok_or_else(|| missing("threshold"))?;
                    steps.push(CompiledStep::MinLength(n as usize));
                }
                RuleKind::RepeatedLineDrop => {
                    let p = rule.threshold.ok_or_else(|| missing("threshold"))?;
                    if p == 0 || p > 100 {
                        return Err(IngestError::InvalidRuleSet(format!(
                            "rule `{}`: percent threshold must be in 1..=100",
                            rule.rule_id
                        )));
                    }
                    repeated_line_percent = Some(p);
                }
            }
        }
        Ok(CompiledRules { id: rules.id.clone(), steps, repeated_line_percent })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn pass(&self, text: &str, with_length: bool) -> String {
        let mut s = text.to_string();
        for step in &self.steps {
            match step {
                CompiledStep::Regex { re, replacement } => {
                    if let std::borrow::Cow::Owned(o) = re.replace_all(&s, regex::NoExpand(replacement)) {
                        s = o;
                    }
                }
                CompiledStep::MinLength(n) if with_length => {
                    if s.chars().count() < *n {
                        s.clear();
                    }
                }
                CompiledStep::MinLength(_) => {}
            }
        }
        s
    }

    /// Applies text rules in order, repeating the pass until the text is stable
    /// so that deletions cannot expose new matches to a later call.
    pub fn clean(&self, text: &str) -> String {
        self.clean_with(text, true)
    }

    fn clean_with(&self, text: &str, with_length: bool) -> String {
        let mut current = self.pass(text, with_length);
        for _ in 1..MAX_CLEANING_PASSES {
            let next = self.pass(&current, with_length);
            if next == current {
                break;
            }
            current = next;
        }
        current
    }
}

/// Cleans a single paragraph with `rules`. Document-level rules
/// (repeated-line drop) have no effect here.
pub fn clean_paragraph(text: &str, rules: &CleaningRuleSet) -> Result<String, IngestError> {
    Ok(CompiledRules::new(rules)?.clean(text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub title: String,
    #[serde(default)]
    pub r#abstract: String,
    #[serde(default)]
    pub journal: Option<String>,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub open_access: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub paragraphs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredDocument {
    pub doc_id: String,
    pub meta: DocumentMeta,
    pub sections: Vec<Section>,
}

impl StructuredDocument {
    /// Replaces the metadata, keeping the parsed abstract when the metadata has none.
    pub fn attach_meta(&mut self, mut meta: DocumentMeta) {
        if meta.r#abstract.trim().is_empty() {
            meta.r#abstract = std::mem::take(&mut self.meta.r#abstract);
        }
        self.meta = meta;
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().flat_map(|s| s.paragraphs.iter().map(String::as_str))
    }
}

/// Key used to recognise a repeated line across pages: whitespace-collapsed,
/// lowercased. In short lines digits are folded so page numbers match each other.
fn repeat_key(text: &str) -> String {
    let collapsed = collapse_whitespace(text);
    let fold_digits = collapsed.split(' ').count() <= 5;
    collapsed
        .chars()
        .map(|c| if fold_digits && c.is_ascii_digit() { '#' } else { c.to_ascii_lowercase() })
        .collect()
}

fn modal_font_size(pages: &[Vec<Span>]) -> f64 {
    // Char-weighted mode over 0.1pt buckets; ties go to the smaller size.
    let mut weights: BTreeMap<i64, usize> = BTreeMap::new();
    for span in pages.iter().flatten() {
        let bucket = (span.font_size * 10.0).round() as i64;
        *weights.entry(bucket).or_default() += span.text.chars().count();
    }
    let mut best: Option<(i64, usize)> = None;
    for (bucket, w) in weights {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((bucket, w));
        }
    }
    best.map(|(b, _)| b as f64 / 10.0).unwrap_or(0.0)
}

fn is_heading(span: &Span, modal: f64) -> bool {
    span.font_size >= modal + HEADING_SIZE_DELTA - 1e-9
        || (span.bold && span.text.split_whitespace().count() <= HEADING_MAX_BOLD_WORDS)
}

fn ends_sentence(text: &str) -> bool {
    text.trim_end()
        .chars()
        .last()
        .is_some_and(|c| matches!(c, '.' | '!' | '?' | ':' | '"' | '\u{201d}' | ')'))
}

/// Converts a tagged-span document into a structured document.
///
/// Each body span is one text block; consecutive blocks are joined into one
/// paragraph while the previous block does not end a sentence (a paragraph
/// continued across a column or page break). Sections split at headings;
/// body text before the first heading lands in a section with an empty heading.
pub fn ingest_document(raw: &TaggedSpanDocument, rules: &CleaningRuleSet) -> Result<StructuredDocument, IngestError> {
    let compiled = CompiledRules::new(rules)?;
    ingest_with(raw, &compiled)
}

pub fn ingest_with(raw: &TaggedSpanDocument, rules: &CompiledRules) -> Result<StructuredDocument, IngestError> {
    if raw.pages.is_empty() {
        return Err(IngestError::MalformedSpanStream(format!("document `{}` has no pages", raw.doc_id)));
    }
    for (p, page) in raw.pages.iter().enumerate() {
        for pair in page.windows(2) {
            if pair[1].y_order <= pair[0].y_order {
                return Err(IngestError::MalformedSpanStream(format!(
                    "page {} of `{}`: y_order {} follows {}",
                    p + 1,
                    raw.doc_id,
                    pair[1].y_order,
                    pair[0].y_order
                )));
            }
        }
        if let Some(bad) = page.iter().find(|s| !(s.font_size.is_finite() && s.font_size > 0.0)) {
            return Err(IngestError::MalformedSpanStream(format!(
                "page {} of `{}`: invalid font size {}",
                p + 1,
                raw.doc_id,
                bad.font_size
            )));
        }
    }

    let pages: Vec<Vec<Span>> = raw
        .pages
        .iter()
        .map(|page| page.iter().filter(|s| !s.text.trim().is_empty()).cloned().collect())
        .collect();

    let repeated: HashSet<String> = match rules.repeated_line_percent {
        Some(percent) if pages.len() >= 2 => {
            let mut page_counts: HashMap<String, usize> = HashMap::new();
            for page in &pages {
                let keys: HashSet<String> = page.iter().map(|s| repeat_key(&s.text)).collect();
                for k in keys {
                    *page_counts.entry(k).or_default() += 1;
                }
            }
            page_counts
                .into_iter()
                .filter(|(_, n)| n * 100 >= pages.len() * percent as usize)
                .map(|(k, _)| k)
                .collect()
        }
        _ => HashSet::new(),
    };

    let kept: Vec<&Span> = pages
        .iter()
        .flatten()
        .filter(|s| !repeated.contains(&repeat_key(&s.text)))
        .collect();
    let modal = modal_font_size(&pages);

    let mut sections: Vec<Section> = Vec::new();
    let mut current = Section { heading: String::new(), paragraphs: Vec::new() };
    let mut pending: Vec<String> = Vec::new();

    let flush = |pending: &mut Vec<String>, section: &mut Section| {
        if pending.is_empty() {
            return;
        }
        let paragraph = rules.clean(&pending.join(" "));
        pending.clear();
        if !paragraph.is_empty() {
            section.paragraphs.push(paragraph);
        }
    };

    for span in kept {
        if is_heading(span, modal) {
            flush(&mut pending, &mut current);
            let heading = rules.clean_with(&span.text, false);
            if heading.is_empty() {
                continue;
            }
            if !current.heading.is_empty() || !current.paragraphs.is_empty() {
                sections.push(std::mem::replace(&mut current, Section { heading, paragraphs: Vec::new() }));
            } else {
                current.heading = heading;
            }
            continue;
        }
        let block = rules.clean_with(&span.text, false);
        if block.is_empty() {
            continue;
        }
        let continues = pending.last().is_some_and(|prev| !ends_sentence(prev));
        if !continues {
            flush(&mut pending, &mut current);
        }
        pending.push(block);
    }
    flush(&mut pending, &mut current);
    if !current.heading.is_empty() || !current.paragraphs.is_empty() {
        sections.push(current);
    }

    if sections.iter().all(|s| s.paragraphs.is_empty()) {
        return Err(IngestError::EmptyAfterCleaning(raw.doc_id.clone()));
    }

    let abstract_text = sections
        .iter()
        .find(|s| s.heading.trim().eq_ignore_ascii_case("abstract"))
        .map(|s| s.paragraphs.join("\n"))
        .unwrap_or_default();
    let title = sections
        .iter()
        .map(|s| s.heading.as_str())
        .find(|h| !h.is_empty())
        .unwrap_or(&raw.doc_id)
        .to_string();

    Ok(StructuredDocument {
        doc_id: raw.doc_id.clone(),
        meta: DocumentMeta {
            doc_id: raw.doc_id.clone(),
            title,
            r#abstract: abstract_text,
            journal: None,
            year: None,
            open_access: false,
        },
        sections,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedMeta {
    /// Data row number, counting from 1.
    pub row: usize,
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataLoad {
    pub metas: Vec<DocumentMeta>,
    pub rejects: Vec<RejectedMeta>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" => Some(false),
        "true" | "yes" | "y" | "1" => Some(true),
        "false" | "no" | "n" | "0" => Some(false),
        _ => None,
    }
}

/// Reads bibliographic metadata from CSV with at least `doc_id` and `title`
/// columns. Optional columns: `abstract`, `journal`, `year`, `open_access`.
pub fn load_metadata(input: &str) -> Result<MetadataLoad, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let id_col = col("doc_id").ok_or_else(|| IngestError::MissingColumn("doc_id".into()))?;
    let title_col = col("title").ok_or_else(|| IngestError::MissingColumn("title".into()))?;
    let (abs_col, journal_col, year_col, oa_col) = (col("abstract"), col("journal"), col("year"), col("open_access"));

    let mut out = MetadataLoad::default();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let get = |c: Option<usize>| c.and_then(|c| row.get(c)).map(str::trim).unwrap_or("");
        let doc_id = get(Some(id_col)).to_string();
        let reject = |reason: &str| RejectedMeta { row: row_no, doc_id: doc_id.clone(), reason: reason.into() };
        if doc_id.is_empty() {
            out.rejects.push(reject("empty doc_id"));
            continue;
        }
        if !seen.insert(doc_id.clone()) {
            return Err(IngestError::DuplicateDocId(doc_id));
        }
        let title = get(Some(title_col));
        if title.is_empty() {
            out.rejects.push(reject("empty title"));
            continue;
        }
        let year = match get(year_col) {
            "" => None,
            y => match y.parse::<i32>() {
                Ok(y) => Some(y),
                Err(_) => {
                    out.rejects.push(reject(&format!("invalid year `{y}`")));
                    continue;
                }
            },
        };
        let Some(open_access) = parse_bool(get(oa_col)) else {
            out.rejects.push(reject("invalid open_access flag"));
            continue;
        };
        let journal = Some(get(journal_col)).filter(|j| !j.is_empty()).map(str::to_string);
        out.metas.push(DocumentMeta {
            doc_id,
            title: title.to_string(),
            r#abstract: get(abs_col).to_string(),
            journal,
            year,
            open_access,
        });
    }
    Ok(out)
}

/// True when no paragraph holds a control character and none is empty.
pub fn paragraphs_are_clean(doc: &StructuredDocument) -> bool {
    doc.paragraphs().all(|p| !p.is_empty() && !p.chars().any(is_disallowed_control) && !p.contains(['\n', '\r', '\t']))
}
