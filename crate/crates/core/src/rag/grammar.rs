//! The extraction output grammar and its tolerant parser.
//!
//! One line per label, `LABEL: value[; value]*`, with `None` for an absent
//! entity. Several `LABEL: ...` segments may share a line when separated by
//! `|`. Anything else is treated as prose and ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::EntityLabel;

const NONE_MARKERS: &[&str] = &[
    "none", "n/a", "na", "null", "nil", "-", "--", "not mentioned", "not reported", "not specified", "not available",
    "not given", "unknown", "empty",
];

/// Per-label value lists for the eight recognition labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityLists([Vec<String>; 8]);

fn slot(label: EntityLabel) -> Option<usize> {
    EntityLabel::NER.iter().position(|l| *l == label)
}

impl EntityLists {
    pub fn new() -> Self {
        EntityLists::default()
    }

    /// Values for `label`; always empty for a label outside the recognition set.
    pub fn get(&self, label: EntityLabel) -> &[String] {
        slot(label).map(|i| self.0[i].as_slice()).unwrap_or(&[])
    }

    /// Adds a trimmed, non-empty value once. Returns false when the label is
    /// outside the recognition set or the value is blank or already present.
    pub fn push(&mut self, label: EntityLabel, value: impl Into<String>) -> bool {
        let value = value.into();
        let value = value.trim();
        let Some(i) = slot(label) else { return false };
        if value.is_empty() || self.0[i].iter().any(|v| v == value) {
            return false;
        }
        self.0[i].push(value.to_string());
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityLabel, &[String])> {
        EntityLabel::NER.iter().copied().zip(self.0.iter().map(Vec::as_slice))
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Vec::is_empty)
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.0.iter().flatten().map(String::as_str)
    }

    /// Renders the lists in the output grammar, one line per label in report order.
    pub fn to_grammar(&self) -> String {
        let mut out = String::new();
        for (i, (label, values)) in self.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let rendered = if values.is_empty() { "None".to_string() } else { values.join("; ") };
            let _ = write!(out, "{}: {}", label.display_name(), rendered);
        }
        out
    }
}

impl Serialize for EntityLists {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(8))?;
        for (label, values) in self.iter() {
            map.serialize_entry(label.as_str(), values)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for EntityLists {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: BTreeMap<String, Vec<String>> = BTreeMap::deserialize(deserializer)?;
        let mut lists = EntityLists::new();
        for (key, values) in raw {
            let label: EntityLabel = key.parse().map_err(D::Error::custom)?;
            if !label.is_ner() {
                return Err(D::Error::custom(format!("label {label} is not a recognition label")));
            }
            for v in values {
                lists.push(label, v);
            }
        }
        Ok(lists)
    }
}

/// Parsed model output for one abstract.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub entities: EntityLists,
    /// Verbatim model output.
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExtractionResult {
    pub fn get(&self, label: EntityLabel) -> &[String] {
        self.entities.get(label)
    }
}

enum Key {
    Label(EntityLabel),
    /// A recognised label that is not extracted (synthesis method).
    Excluded(EntityLabel),
    Unknown(String),
    Prose,
}

fn classify_key(raw_key: &str) -> Key {
    let cleaned: String = raw_key
        .trim()
        .trim_start_matches(|c: char| c == '-' || c == '*' || c == '#' || c == '>' || c == '•' || c.is_whitespace())
        .chars()
        .filter(|c| !matches!(c, '*' | '`' | '"'))
        .collect();
    let cleaned = cleaned.replace(['_', '-'], " ");
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    if words.is_empty() || words.len() > 4 || cleaned.len() > 40 {
        return Key::Prose;
    }
    let upper = words.join(" ").to_uppercase();
    let label = match upper.as_str() {
        "MATERIAL" | "MATERIALS" | "CATALYST" | "CATALYST MATERIAL" => Some(EntityLabel::Material),
        "CONTROL METHOD" | "CONTROL METHODS" | "CONDITIONING METHOD" => Some(EntityLabel::ControlMethod),
        "PRODUCT" | "PRODUCTS" => Some(EntityLabel::Product),
        "FARADAIC EFFICIENCY" | "FARADAIC EFFICIENCIES" | "FE" => Some(EntityLabel::FaradaicEfficiency),
        "ELECTROLYTE" | "ELECTROLYTES" => Some(EntityLabel::Electrolyte),
        "VOLTAGE" | "POTENTIAL" | "APPLIED POTENTIAL" => Some(EntityLabel::Voltage),
        "CURRENT DENSITY" | "CURRENT DENSITIES" => Some(EntityLabel::CurrentDensity),
        "CELL SETUP" | "CELL SET UP" | "CELL" => Some(EntityLabel::CellSetup),
        "SYNTHESIS METHOD" => return Key::Excluded(EntityLabel::SynthesisMethod),
        _ => None,
    };
    match label {
        Some(l) => Key::Label(l),
        None if words.iter().all(|w| w.chars().all(|c| !c.is_lowercase())) => Key::Unknown(upper),
        None => Key::Prose,
    }
}

fn split_key(segment: &str) -> Option<(&str, &str)> {
    let idx = segment.find([':', '\u{ff1a}'])?;
    let sep_len = segment[idx..].chars().next().map(char::len_utf8).unwrap_or(1);
    Some((&segment[..idx], &segment[idx + sep_len..]))
}

fn starts_with_label(segment: &str) -> bool {
    split_key(segment).is_some_and(|(k, _)| matches!(classify_key(k), Key::Label(_) | Key::Excluded(_)))
}

fn is_none_marker(value: &str) -> bool {
    let v = value.trim().trim_end_matches('.').trim().to_lowercase();
    NONE_MARKERS.contains(&v.as_str())
}

/// Parses model output into per-label lists. Never fails: unknown labels are
/// reported in `warnings`, missing labels stay empty, and every value is a
/// trimmed slice of the input.
pub fn parse_extraction(raw: &str) -> ExtractionResult {
    let mut result = ExtractionResult { raw_text: raw.to_string(), ..Default::default() };
    for line in raw.lines() {
        // Split on `|` only where the next piece opens with a label.
        let mut segments: Vec<&str> = Vec::new();
        let mut start = 0;
        for (i, _) in line.match_indices('|') {
            if starts_with_label(&line[i + 1..]) {
                segments.push(&line[start..i]);
                start = i + 1;
            }
        }
        segments.push(&line[start..]);

        for segment in segments {
            let Some((key, rest)) = split_key(segment) else { continue };
            match classify_key(key) {
                Key::Label(label) => {
                    for value in rest.split(';') {
                        let v = value.trim();
                        let v = v.strip_suffix('.').map(str::trim_end).unwrap_or(v);
                        if !v.is_empty() && !is_none_marker(v) {
                            result.entities.push(label, v);
                        }
                    }
                }
                Key::Excluded(label) => result.warnings.push(format!("label {} is not extracted; ignored", label.display_name())),
                Key::Unknown(name) => result.warnings.push(format!("unknown label `{name}` ignored")),
                Key::Prose => {}
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipe_separated_grammar_instance() {
        let r = parse_extraction("MATERIAL: Cu nanowire | PRODUCT: C2H4 | FARADAIC EFFICIENCY: 70%");
        assert_eq!(r.get(EntityLabel::Material), ["Cu nanowire"]);
        assert_eq!(r.get(EntityLabel::Product), ["C2H4"]);
        assert_eq!(r.get(EntityLabel::FaradaicEfficiency), ["70%"]);
        for label in [EntityLabel::ControlMethod, EntityLabel::Electrolyte, EntityLabel::Voltage, EntityLabel::CurrentDensity, EntityLabel::CellSetup] {
            assert!(r.get(label).is_empty());
        }
    }

    #[test]
    fn explicit_none_is_empty() {
        let r = parse_extraction("CELL SETUP: None");
        assert!(r.entities.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn verbose_answer_with_embedded_line() {
        let raw = "Sure! Here is what I found in the abstract.\n\
                   The authors study copper electrodes in detail.\n\
                   ELECTROLYTE: 0.1 M KHCO3\n\
                   Let me know if you need anything else.";
        let r = parse_extraction(raw);
        assert_eq!(r.get(EntityLabel::Electrolyte), ["0.1 M KHCO3"]);
        assert_eq!(r.entities.values().count(), 1);
        assert_eq!(r.raw_text, raw);
    }

    #[test]
    fn multiple_values_aliases_and_markdown() {
        let raw = "- **PRODUCT**: CO; HCOOH.\n* POTENTIAL: -0.8 V vs RHE\nFaradaic_Efficiency: 90%; N/A\nCATALYST SUPPORT: carbon";
        let r = parse_extraction(raw);
        assert_eq!(r.get(EntityLabel::Product), ["CO", "HCOOH"]);
        assert_eq!(r.get(EntityLabel::Voltage), ["-0.8 V vs RHE"]);
        assert_eq!(r.get(EntityLabel::FaradaicEfficiency), ["90%"]);
        assert_eq!(r.warnings, vec!["unknown label `CATALYST SUPPORT` ignored".to_string()]);
    }

    #[test]
    fn pipes_inside_values_are_kept() {
        let r = parse_extraction("MATERIAL: Cu|Ag bilayer");
        assert_eq!(r.get(EntityLabel::Material), ["Cu|Ag bilayer"]);
    }

    #[test]
    fn grammar_round_trips_through_parser() {
        let mut lists = EntityLists::new();
        lists.push(EntityLabel::Material, "Cu nanowire");
        lists.push(EntityLabel::Product, "C2H4");
        lists.push(EntityLabel::Product, "C2H5OH");
        let text = lists.to_grammar();
        assert_eq!(text.lines().count(), 8);
        assert_eq!(text.lines().filter(|l| l.ends_with(": None")).count(), 6);
        assert_eq!(parse_extraction(&text).entities, lists);
    }

    #[test]
    fn serde_uses_report_order() {
        let mut lists = EntityLists::new();
        lists.push(EntityLabel::CellSetup, "H-cell");
        let json = serde_json::to_string(&lists).unwrap();
        assert!(json.starts_with("{\"MATERIAL\":[]"));
        assert_eq!(serde_json::from_str::<EntityLists>(&json).unwrap(), lists);
    }

    #[test]
    fn arbitrary_text_never_panics() {
        for s in ["", ":", "::::", "|:|", "MATERIAL:", "：", "MATERIAL：Cu", "\u{0}\u{ffff}|a:b"] {
            let _ = parse_extraction(s);
        }
        assert_eq!(parse_extraction("MATERIAL：Cu").get(EntityLabel::Material), ["Cu"]);
    }
}
