//! Catalyst recommendation: prompt execution and heuristic answer parsing.
//!
//! The structured fields are conveniences for reviewers; `raw_text` is always
//! kept and is what experts judge.

use serde::{Deserialize, Serialize};

use super::prompt::{assemble_recommendation_prompt, RecommendationQuery};
use crate::gateway::{CompletionRequest, Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Parsed,
    /// No sentence named a material; only `raw_text` is meaningful.
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationAnswer {
    pub recommended_material: String,
    pub control_method_description: String,
    pub rationale: String,
    pub raw_text: String,
    pub status: AnswerStatus,
}

/// Splits prose into sentences at `.`, `!` or `?` followed by whitespace and
/// an uppercase letter, digit or opening bracket. Ellipses inside a sentence
/// ("material ... is") do not split because a lowercase word follows.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut j = i + 1;
        if j < chars.len() && !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        let boundary = match chars.get(j) {
            None => true,
            Some(&(_, n)) => n.is_uppercase() || n.is_ascii_digit() || n == '(' || n == '"',
        };
        if boundary {
            let end = pos + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = chars.get(j).map(|&(p, _)| p).unwrap_or(text.len());
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn mentions_control_method(sentence: &str) -> bool {
    let lower = sentence.to_ascii_lowercase();
    lower.contains("control method") || lower.contains("control strategy")
}

const MATERIAL_CUES: [&str; 2] = ["material", "catalyst"];
const COPULAS: [&str; 4] = [" would be ", " will be ", " is ", " are "];

/// The material named after the first copula that follows a material cue.
fn material_in(sentence: &str) -> Option<String> {
    let lower = sentence.to_ascii_lowercase();
    let cue = MATERIAL_CUES.iter().filter_map(|c| lower.find(c)).min()?;
    let (at, len) = COPULAS
        .iter()
        .filter_map(|c| lower[cue..].find(c).map(|p| (cue + p, c.len())))
        .min_by_key(|(p, _)| *p)?;
    let rest = sentence[at + len..].trim();
    let rest = rest.strip_prefix("also ").unwrap_or(rest);
    let material = rest.trim_end_matches(['.', '!', '?']).trim();
    (!material.is_empty()).then(|| material.to_string())
}

/// Splits an answer into material, control-method description and rationale.
pub fn parse_recommendation(raw: &str) -> RecommendationAnswer {
    let sentences = split_sentences(raw);
    let material_idx = sentences
        .iter()
        .position(|s| !mentions_control_method(s) && material_in(s).is_some());
    let recommended_material = material_idx.and_then(|i| material_in(sentences[i])).unwrap_or_default();

    let mut control = Vec::new();
    let mut rationale = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        if Some(i) == material_idx {
            continue;
        }
        if mentions_control_method(s) {
            control.push(*s);
        } else {
            rationale.push(*s);
        }
    }
    RecommendationAnswer {
        status: if recommended_material.is_empty() { AnswerStatus::Unparseable } else { AnswerStatus::Parsed },
        recommended_material,
        control_method_description: control.join(" "),
        rationale: rationale.join(" "),
        raw_text: raw.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Sends the recommendation prompt and parses the reply. Gateway errors
/// propagate; an answer without a material is returned with status
/// [`AnswerStatus::Unparseable`].
pub fn recommend(q: &RecommendationQuery, cfg: &RecommendConfig, gateway: &Gateway) -> Result<RecommendationAnswer, GatewayError> {
    if !q.is_valid() {
        return Err(GatewayError::InvalidRequest("recommendation query fields must be non-empty".into()));
    }
    let mut req = CompletionRequest::new(cfg.model.clone(), assemble_recommendation_prompt(q));
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req.request_tag = format!("recommend:{}", q.product);
    let resp = gateway.complete(&req)?;
    Ok(parse_recommendation(&resp.text))
}
