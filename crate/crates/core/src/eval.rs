//! Expert-judgment scoring and the model × shot-mode ablation.
//!
//! Modified Correct credits a correct answer on an entity that exists plus an
//! empty answer where the entity genuinely does not occur. All accuracies are
//! exact rationals; percentages exist only in rendered reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EntityLabel;
use crate::rag::{extract_batch, ExtractionItem, NerConfig, NerPorts, RunStatus, ShotMode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no judged items for {0}")]
    EmptyItemSet(Scope),
    #[error("item {item_id} has category {found}, expected {expected}")]
    CategoryMismatch { item_id: String, expected: EntityLabel, found: EntityLabel },
    #[error("{0} is not a recognition category")]
    NotARecognitionLabel(EntityLabel),
    #[error("nothing to aggregate")]
    NothingToAggregate,
    #[error("missing judgments for {} (config, item) pairs: {}", .0.len(), preview(.0))]
    IncompleteJudgments(Vec<(String, String)>),
    #[error("judgment for {item_id} under {config} was recorded for answer {judged:?}, but the pipeline now answers {live:?}")]
    StaleJudgment { config: String, item_id: String, judged: Vec<String>, live: Vec<String> },
    #[error("extraction failed for {item_id} under {config}: {message}")]
    ExtractionFailed { config: String, item_id: String, message: String },
    #[error("duplicate item {0}")]
    DuplicateItem(String),
    #[error("{source_name}:{line}: {message}")]
    Fixture { source_name: String, line: usize, message: String },
}

fn preview(pairs: &[(String, String)]) -> String {
    let mut s: Vec<String> = pairs.iter().take(5).map(|(c, i)| format!("{c}:{i}")).collect();
    if pairs.len() > 5 {
        s.push("…".into());
    }
    s.join(", ")
}

/// Expert verdict on one answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Judgment {
    /// An empty answer for a truly absent entity counts as correct.
    pub answer_correct: bool,
    /// Whether the text contains this entity type at all.
    pub entity_exists: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedItem {
    pub item_id: String,
    pub category: EntityLabel,
    pub llm_answer: Vec<String>,
    pub judgment: Judgment,
    pub judged_by: String,
    pub judged_at: DateTime<Utc>,
}

impl JudgedItem {
    pub fn is_correct(&self) -> bool {
        self.judgment.answer_correct && self.judgment.entity_exists
    }

    pub fn is_modified_correct(&self) -> bool {
        self.is_correct() || (!self.judgment.entity_exists && self.llm_answer.is_empty())
    }
}

/// A metrics row: one category or the overall total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Category(EntityLabel),
    Overall,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Category(l) => f.write_str(l.as_str()),
            Scope::Overall => f.write_str("OVERALL"),
        }
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "OVERALL" {
            return Ok(Scope::Overall);
        }
        s.parse().map(Scope::Category).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: Scope,
    pub count: u64,
    pub correct: u64,
    pub existence: u64,
    pub modified_correct: u64,
    #[serde(with = "ratio_text")]
    pub modified_accuracy: Ratio<u64>,
}

impl CategoryMetrics {
    pub fn percent(&self) -> String {
        format_percent(self.modified_accuracy)
    }
}

mod ratio_text {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let s = String::deserialize(d)?;
        let (n, den) = s.split_once('/').ok_or_else(|| serde::de::Error::custom("expected n/d"))?;
        let n: u64 = n.trim().parse().map_err(serde::de::Error::custom)?;
        let den: u64 = den.trim().parse().map_err(serde::de::Error::custom)?;
        if den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Ratio::new(n, den))
    }
}

/// Renders a ratio in [0, 1] as a percentage with two decimals, rounding
/// half to even: 11/16 → "68.75%", 17/32 → "53.12%", 59/160 → "36.88%".
pub fn format_percent(r: Ratio<u64>) -> String {
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    let scaled = n * 10_000;
    let (mut q, rem) = (scaled / d, scaled % d);
    if 2 * rem > d || (2 * rem == d && q % 2 == 1) {
        q += 1;
    }
    format!("{}.{:02}%", q / 100, q % 100)
}

/// Scores the judged items of one recognition category.
pub fn score_category(items: &[JudgedItem], category: EntityLabel) -> Result<CategoryMetrics, EvalError> {
    if !category.is_ner() {
        return Err(EvalError::NotARecognitionLabel(category));
    }
    if let Some(bad) = items.iter().find(|i| i.category != category) {
        return Err(EvalError::CategoryMismatch { item_id: bad.item_id.clone(), expected: category, found: bad.category });
    }
    if items.is_empty() {
        return Err(EvalError::EmptyItemSet(Scope::Category(category)));
    }
    let count = items.len() as u64;
    let correct = items.iter().filter(|i| i.is_correct()).count() as u64;
    let existence = items.iter().filter(|i| i.judgment.entity_exists).count() as u64;
    let modified_correct = items.iter().filter(|i| i.is_modified_correct()).count() as u64;
    Ok(CategoryMetrics {
        category: Scope::Category(category),
        count,
        correct,
        existence,
        modified_correct,
        modified_accuracy: Ratio::new(modified_correct, count),
    })
}

/// Fieldwise sum of disjoint category rows.
pub fn aggregate(rows: &[CategoryMetrics]) -> Result<CategoryMetrics, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::NothingToAggregate);
    }
    let sum = |f: fn(&CategoryMetrics) -> u64| rows.iter().map(f).sum::<u64>();
    let count = sum(|r| r.count);
    let modified_correct = sum(|r| r.modified_correct);
    if count == 0 {
        return Err(EvalError::EmptyItemSet(Scope::Overall));
    }
    Ok(CategoryMetrics {
        category: Scope::Overall,
        count,
        correct: sum(|r| r.correct),
        existence: sum(|r| r.existence),
        modified_correct,
        modified_accuracy: Ratio::new(modified_correct, count),
    })
}

/// Per-category rows (report order, categories without items omitted) and
/// the overall row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub categories: Vec<CategoryMetrics>,
    pub overall: CategoryMetrics,
}

pub fn group_by_category(items: &[JudgedItem]) -> BTreeMap<usize, (EntityLabel, Vec<JudgedItem>)> {
    let mut groups: BTreeMap<usize, (EntityLabel, Vec<JudgedItem>)> = BTreeMap::new();
    for item in items {
        let pos = EntityLabel::NER.iter().position(|l| *l == item.category).unwrap_or(usize::MAX);
        groups.entry(pos).or_insert_with(|| (item.category, Vec::new())).1.push(item.clone());
    }
    groups
}

pub fn evaluate(items: &[JudgedItem]) -> Result<EvaluationReport, EvalError> {
    let categories = group_by_category(items)
        .into_values()
        .map(|(label, group)| score_category(&group, label))
        .collect::<Result<Vec<_>, _>>()?;
    let overall = aggregate(&categories).map_err(|_| EvalError::EmptyItemSet(Scope::Overall))?;
    Ok(EvaluationReport { categories, overall })
}

/// Reads judged items from JSON lines. Item ids must be unique.
pub fn load_judged_items(text: &str, source_name: &str) -> Result<Vec<JudgedItem>, EvalError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let item: JudgedItem = serde_json::from_str(line).map_err(|e| EvalError::Fixture {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !item.category.is_ner() {
            return Err(EvalError::NotARecognitionLabel(item.category));
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(EvalError::DuplicateItem(item.item_id));
        }
        out.push(item);
    }
    Ok(out)
}

pub fn load_judged_items_file(path: &Path) -> Result<Vec<JudgedItem>, EvalError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Fixture { source_name: name.clone(), line: 0, message: e.to_string() })?;
    load_judged_items(&text, &name)
}

const TABLE_HEADER: [&str; 6] = ["Category", "Count", "Correct", "Existence", "Modified Correct", "Modified Accuracy"];

fn render_grid(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn metrics_cells(name: String, m: &CategoryMetrics) -> Vec<String> {
    vec![name, m.count.to_string(), m.correct.to_string(), m.existence.to_string(), m.modified_correct.to_string(), m.percent()]
}

fn scope_name(s: Scope) -> String {
    match s {
        Scope::Category(l) => l.display_name().to_string(),
        Scope::Overall => "OVERALL".to_string(),
    }
}

/// Plain-text table with one row per category and an OVERALL row.
pub fn render_evaluation_table(report: &EvaluationReport) -> String {
    let mut rows: Vec<Vec<String>> = report.categories.iter().map(|m| metrics_cells(scope_name(m.category), m)).collect();
    rows.push(metrics_cells(scope_name(Scope::Overall), &report.overall));
    render_grid(&TABLE_HEADER, &rows)
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    #[serde(flatten)]
    metrics: &'a CategoryMetrics,
    modified_accuracy_percent: String,
}

fn metrics_json(m: &CategoryMetrics) -> serde_json::Value {
    serde_json::to_value(MetricsJson { metrics: m, modified_accuracy_percent: m.percent() }).expect("metrics serialize")
}

pub fn render_evaluation_json(report: &EvaluationReport) -> String {
    let v = serde_json::json!({
        "categories": report.categories.iter().map(metrics_json).collect::<Vec<_>>(),
        "overall": metrics_json(&report.overall),
    });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Baseline,
    FineTuned,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::Baseline => "baseline",
            ModelVariant::FineTuned => "fine_tuned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub model_variant: ModelVariant,
    pub shot_mode: ShotMode,
}

impl AblationConfig {
    /// baseline/zero, baseline/few, fine_tuned/zero, fine_tuned/few.
    pub fn canonical_grid(k: usize) -> Vec<AblationConfig> {
        let few = ShotMode::FewShot { k };
        [ModelVariant::Baseline, ModelVariant::FineTuned]
            .into_iter()
            .flat_map(|v| [ShotMode::ZeroShot, few].map(|m| AblationConfig { model_variant: v, shot_mode: m }))
            .collect()
    }

    /// Stable identifier, e.g. `fine_tuned/few_shot:3`.
    pub fn key(&self) -> String {
        format!("{}/{}", self.model_variant, self.shot_mode)
    }

    fn canonical_rank(&self) -> (ModelVariant, usize) {
        (self.model_variant, self.shot_mode.k())
    }
}

/// Gateway model identifiers for the two variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIds {
    pub baseline: String,
    pub fine_tuned: String,
}

impl ModelIds {
    pub fn for_variant(&self, v: ModelVariant) -> &str {
        match v {
            ModelVariant::Baseline => &self.baseline,
            ModelVariant::FineTuned => &self.fine_tuned,
        }
    }
}

/// One evaluation question: an abstract asked about one category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub category: EntityLabel,
    pub r#abstract: String,
}

pub fn load_eval_items(text: &str, source_name: &str) -> Result<Vec<EvalItem>, EvalError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let item: EvalItem = serde_json::from_str(line).map_err(|e| EvalError::Fixture {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !item.category.is_ner() {
            return Err(EvalError::NotARecognitionLabel(item.category));
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(EvalError::DuplicateItem(item.item_id));
        }
        out.push(item);
    }
    Ok(out)
}

/// Supplies expert judgments per (config, item).
pub trait JudgmentSource: Send + Sync {
    fn judgment(&self, config: &AblationConfig, item_id: &str) -> Option<JudgedItem>;
}

/// Judgments recorded in per-config fixture files.
#[derive(Debug, Clone, Default)]
pub struct FixtureJudgments {
    by_config: HashMap<String, HashMap<String, JudgedItem>>,
}

impl FixtureJudgments {
    pub fn new() -> Self {
        FixtureJudgments::default()
    }

    pub fn insert(&mut self, config: &AblationConfig, items: Vec<JudgedItem>) {
        let map = self.by_config.entry(config.key()).or_default();
        for item in items {
            map.insert(item.item_id.clone(), item);
        }
    }
}

impl JudgmentSource for FixtureJudgments {
    fn judgment(&self, config: &AblationConfig, item_id: &str) -> Option<JudgedItem> {
        self.by_config.get(&config.key())?.get(item_id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub model: String,
    pub count: u64,
    pub correct: u64,
    pub modified_correct: u64,
    #[serde(with = "ratio_text")]
    pub modified_accuracy: Ratio<u64>,
    pub categories: Vec<CategoryMetrics>,
}

impl AblationRow {
    pub fn percent(&self) -> String {
        format_percent(self.modified_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Ports used by every ablation cell. Only the model and shot mode vary.
pub struct AblationPorts<'a> {
    pub ner: NerPorts<'a>,
    pub models: &'a ModelIds,
    pub max_tokens: u32,
    pub workers: usize,
}

/// Runs the extraction pipeline for each config on the same items, pairs the
/// live answers with recorded judgments, and scores. Rows come out in
/// canonical order. Fails without a partial report when any judgment is
/// missing or was recorded against a different answer.
pub fn run_ablation(
    grid: &[AblationConfig],
    items: &[EvalItem],
    ports: &AblationPorts<'_>,
    judgments: &dyn JudgmentSource,
) -> Result<AblationReport, EvalError> {
    let mut grid = grid.to_vec();
    grid.sort_by_key(AblationConfig::canonical_rank);
    grid.dedup();

    let extraction: Vec<ExtractionItem> =
        items.iter().map(|i| ExtractionItem { item_id: i.item_id.clone(), r#abstract: i.r#abstract.clone() }).collect();

    let records: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = grid
            .iter()
            .map(|config| {
                let cfg = NerConfig {
                    mode: config.shot_mode,
                    model: ports.models.for_variant(config.model_variant).to_string(),
                    temperature: 0.0,
                    max_tokens: ports.max_tokens,
                };
                let extraction = &extraction;
                scope.spawn(move || extract_batch(extraction, &cfg, &ports.ner, ports.workers))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread panicked")).collect()
    });

    let mut missing = Vec::new();
    let mut judged_per_config = Vec::new();
    for (config, runs) in grid.iter().zip(&records) {
        let mut judged = Vec::with_capacity(items.len());
        for (item, run) in items.iter().zip(runs) {
            if run.status != RunStatus::Ok {
                return Err(EvalError::ExtractionFailed {
                    config: config.key(),
                    item_id: item.item_id.clone(),
                    message: run.error.clone().unwrap_or_default(),
                });
            }
            let live: Vec<String> = run.parsed.as_ref().map(|p| p.get(item.category).to_vec()).unwrap_or_default();
            let Some(mut j) = judgments.judgment(config, &item.item_id) else {
                missing.push((config.key(), item.item_id.clone()));
                continue;
            };
            if j.llm_answer != live {
                return Err(EvalError::StaleJudgment { config: config.key(), item_id: item.item_id.clone(), judged: j.llm_answer, live });
            }
            j.category = item.category;
            judged.push(j);
        }
        judged_per_config.push(judged);
    }
    if !missing.is_empty() {
        return Err(EvalError::IncompleteJudgments(missing));
    }

    let rows = grid
        .iter()
        .zip(judged_per_config)
        .map(|(config, judged)| ablation_row(*config, ports.models.for_variant(config.model_variant), &judged))
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(AblationReport { rows })
}

/// Scores one config's judged items into a report row.
pub fn ablation_row(config: AblationConfig, model: &str, judged: &[JudgedItem]) -> Result<AblationRow, EvalError> {
    let report = evaluate(judged)?;
    Ok(AblationRow {
        config,
        model: model.to_string(),
        count: report.overall.count,
        correct: report.overall.correct,
        modified_correct: report.overall.modified_correct,
        modified_accuracy: report.overall.modified_accuracy,
        categories: report.categories,
    })
}

/// Sorts rows into canonical config order.
pub fn canonical_order(rows: &mut [AblationRow]) {
    rows.sort_by_key(|r| r.config.canonical_rank());
}

fn shot_name(m: ShotMode) -> String {
    match m {
        ShotMode::ZeroShot => "Zero shot".into(),
        ShotMode::FewShot { k } => format!("Few shot (k={k})"),
    }
}

pub fn render_ablation_table(report: &AblationReport) -> String {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let model = match r.config.model_variant {
                ModelVariant::Baseline => "Baseline LLM",
                ModelVariant::FineTuned => "Fine-tuned LLM",
            };
            vec![model.to_string(), shot_name(r.config.shot_mode), r.count.to_string(), r.correct.to_string(), r.modified_correct.to_string(), r.percent()]
        })
        .collect();
    render_grid(&["Model", "Prompting", "Count", "Correct", "Modified Correct", "Modified Accuracy"], &rows)
}

pub fn render_ablation_json(report: &AblationReport) -> String {
    let rows: Vec<serde_json::Value> = report
        .rows
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).expect("row serializes");
            v["config_key"] = r.config.key().into();
            v["modified_accuracy_percent"] = r.percent().into();
            v["categories"] = r.categories.iter().map(metrics_json).collect::<Vec<_>>().into();
            v
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&serde_json::json!({ "rows": rows })).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: usize, category: EntityLabel, exists: bool, correct: bool, empty: bool) -> JudgedItem {
        JudgedItem {
            item_id: format!("i{id}"),
            category,
            llm_answer: if empty { vec![] } else { vec!["x".into()] },
            judgment: Judgment { answer_correct: correct, entity_exists: exists },
            judged_by: "expert".into(),
            judged_at: DateTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn faradaic_efficiency_row() {
        let fe = EntityLabel::FaradaicEfficiency;
        let mut items: Vec<_> = (0..11).map(|i| item(i, fe, true, true, false)).collect();
        items.extend((11..18).map(|i| item(i, fe, false, true, true)));
        items.extend((18..20).map(|i| item(i, fe, false, false, false)));
        let m = score_category(&items, fe).unwrap();
        assert_eq!((m.count, m.existence, m.correct, m.modified_correct), (20, 11, 11, 18));
        assert_eq!(m.modified_accuracy, Ratio::new(9, 10));
        assert_eq!(m.percent(), "90.00%");
    }

    #[test]
    fn all_absent_and_empty_is_full_marks() {
        let items: Vec<_> = (0..5).map(|i| item(i, EntityLabel::CellSetup, false, true, true)).collect();
        let m = score_category(&items, EntityLabel::CellSetup).unwrap();
        assert_eq!((m.correct, m.modified_accuracy), (0, Ratio::new(1, 1)));
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert_eq!(
            score_category(&[], EntityLabel::Material),
            Err(EvalError::EmptyItemSet(Scope::Category(EntityLabel::Material)))
        );
        let items = [item(0, EntityLabel::Product, true, true, false)];
        assert!(matches!(score_category(&items, EntityLabel::Material), Err(EvalError::CategoryMismatch { .. })));
        assert!(matches!(score_category(&[], EntityLabel::SynthesisMethod), Err(EvalError::NotARecognitionLabel(_))));
    }

    #[test]
    fn aggregate_sums_fields() {
        let row = |mc: u64| CategoryMetrics {
            category: Scope::Category(EntityLabel::Material),
            count: 10,
            correct: mc,
            existence: 10,
            modified_correct: mc,
            modified_accuracy: Ratio::new(mc, 10),
        };
        let total = aggregate(&[row(3), row(7)]).unwrap();
        assert_eq!(total.modified_accuracy, Ratio::new(1, 2));
        assert_eq!(total.percent(), "50.00%");
        let single = aggregate(&[row(3)]).unwrap();
        assert_eq!((single.count, single.modified_correct, single.modified_accuracy), (10, 3, Ratio::new(3, 10)));
        assert_eq!(aggregate(&[]), Err(EvalError::NothingToAggregate));
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(format_percent(Ratio::new(110, 160)), "68.75%");
        assert_eq!(format_percent(Ratio::new(59, 160)), "36.88%");
        assert_eq!(format_percent(Ratio::new(66, 160)), "41.25%");
        assert_eq!(format_percent(Ratio::new(85, 160)), "53.12%");
        assert_eq!(format_percent(Ratio::new(1, 3)), "33.33%");
        assert_eq!(format_percent(Ratio::new(2, 3)), "66.67%");
        assert_eq!(format_percent(Ratio::new(0, 1)), "0.00%");
        assert_eq!(format_percent(Ratio::new(1, 1)), "100.00%");
    }

    #[test]
    fn canonical_grid_order() {
        let keys: Vec<_> = AblationConfig::canonical_grid(3).iter().map(AblationConfig::key).collect();
        assert_eq!(keys, ["baseline/zero_shot", "baseline/few_shot:3", "fine_tuned/zero_shot", "fine_tuned/few_shot:3"]);
    }

    #[test]
    fn metrics_json_round_trip() {
        let items: Vec<_> = (0..4).map(|i| item(i, EntityLabel::Voltage, i % 2 == 0, true, i % 2 == 1)).collect();
        let m = score_category(&items, EntityLabel::Voltage).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"category\":\"VOLTAGE\""));
        assert!(json.contains("\"modified_accuracy\":\"1/1\""));
        assert_eq!(serde_json::from_str::<CategoryMetrics>(&json).unwrap(), m);
    }

    #[test]
    fn table_has_overall_row() {
        let items: Vec<_> = (0..4).map(|i| item(i, EntityLabel::Material, true, i < 3, false)).collect();
        let report = evaluate(&items).unwrap();
        let table = render_evaluation_table(&report);
        assert!(table.starts_with("Category"));
        assert!(table.lines().last().unwrap().starts_with("OVERALL"));
        assert!(table.contains("75.00%"));
        let json: serde_json::Value = serde_json::from_str(&render_evaluation_json(&report)).unwrap();
        assert_eq!(json["overall"]["modified_accuracy_percent"], "75.00%");
    }
}
