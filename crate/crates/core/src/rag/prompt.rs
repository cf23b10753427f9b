//! Prompt templates for entity recognition and catalyst recommendation.
//!
//! Templates are versioned. Any wording change must bump the version constant;
//! the golden tests in `tests/golden/` hold the rendered bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::EntityLists;
use crate::gateway::{ChatMessage, Role};

pub const NER_TEMPLATE_VERSION: &str = "ner-v1";
pub const RECOMMEND_TEMPLATE_VERSION: &str = "recommend-v1";

pub const NER_SYSTEM_PROMPT: &str = "\
You are an expert in electrocatalytic CO2 reduction. Your task is to extract named entities from the abstract of a scientific paper.

Entity labels:
- MATERIAL: the catalyst material that is studied.
- CONTROL METHOD: the strategy used to tune the catalyst, such as structure control, alloying, composites or defect engineering.
- PRODUCT: the products of CO2 reduction, main product first.
- FARADAIC EFFICIENCY: the Faradaic efficiency reported for each product, with its unit.
- ELECTROLYTE: the electrolyte, with its concentration.
- VOLTAGE: the applied potential, with its reference electrode.
- CURRENT DENSITY: the reported current density, with its unit.
- CELL SETUP: the electrochemical cell configuration, such as an H-cell, flow cell or membrane electrode assembly.

Answer with exactly one line per label, in the order listed above, using the format
LABEL: value; value
Write `LABEL: None` when the abstract does not mention that entity. Copy values from the abstract and do not add explanations.";

const NER_USER_PREFIX: &str = "Extract the entities from the following abstract.\n\nAbstract:\n";

pub const RECOMMEND_SYSTEM_PROMPT: &str = "\
You are an expert in the design of catalysts for electrocatalytic CO2 reduction.";

pub const RECOMMEND_INSTRUCTION: &str = "\
Recommend the most suitable catalyst material for producing the target product, given the material category and the type of control method. State the recommended material and the control method that should be used to prepare it, and explain your choice.";

/// Few-shot or zero-shot prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ShotMode {
    ZeroShot,
    FewShot { k: usize },
}

pub const DEFAULT_FEW_SHOT_K: usize = 3;
pub const MAX_FEW_SHOT_K: usize = 8;

impl ShotMode {
    pub fn few(k: usize) -> Result<Self, String> {
        if (1..=MAX_FEW_SHOT_K).contains(&k) {
            Ok(ShotMode::FewShot { k })
        } else {
            Err(format!("few-shot k must be in 1..={MAX_FEW_SHOT_K}, got {k}"))
        }
    }

    pub fn k(self) -> usize {
        match self {
            ShotMode::ZeroShot => 0,
            ShotMode::FewShot { k } => k,
        }
    }
}

impl std::fmt::Display for ShotMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShotMode::ZeroShot => f.write_str("zero_shot"),
            ShotMode::FewShot { k } => write!(f, "few_shot:{k}"),
        }
    }
}

impl std::str::FromStr for ShotMode {
    type Err = String;

    /// Accepts `zero_shot`/`zero`, `few_shot`/`few` (default k), or `few_shot:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "zero_shot" | "zero" => Ok(ShotMode::ZeroShot),
            "few_shot" | "few" => ShotMode::few(DEFAULT_FEW_SHOT_K),
            other => {
                let k = other
                    .strip_prefix("few_shot:")
                    .or_else(|| other.strip_prefix("few:"))
                    .ok_or_else(|| format!("unknown shot mode `{other}`"))?;
                ShotMode::few(k.parse().map_err(|_| format!("invalid k in `{other}`"))?)
            }
        }
    }
}

impl TryFrom<String> for ShotMode {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ShotMode> for String {
    fn from(m: ShotMode) -> String {
        m.to_string()
    }
}

/// A retrieved worked example: an abstract with its gold entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub chunk_id: String,
    pub exemplar_text: String,
    pub exemplar_entities: EntityLists,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerPromptBundle {
    pub r#abstract: String,
    pub exemplars: Vec<Exemplar>,
    pub rendered: Vec<ChatMessage>,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("shot mode {mode} is inconsistent with {count} exemplars")]
    ExemplarModeMismatch { mode: ShotMode, count: usize },
    #[error("abstract is empty")]
    EmptyAbstract,
    #[error("unsupported template version `{0}`")]
    UnknownTemplate(String),
}

pub fn ner_user_message(r#abstract: &str) -> String {
    format!("{NER_USER_PREFIX}{}", r#abstract.trim())
}

/// Renders the recognition prompt: system message, then one user/assistant
/// pair per exemplar in retrieval order, then the target abstract.
pub fn assemble_ner_prompt(r#abstract: &str, exemplars: &[Exemplar], mode: ShotMode) -> Result<NerPromptBundle, PromptError> {
    if r#abstract.trim().is_empty() {
        return Err(PromptError::EmptyAbstract);
    }
    let consistent = match mode {
        ShotMode::ZeroShot => exemplars.is_empty(),
        ShotMode::FewShot { k } => (1..=k).contains(&exemplars.len()),
    };
    if !consistent {
        return Err(PromptError::ExemplarModeMismatch { mode, count: exemplars.len() });
    }
    let mut rendered = vec![ChatMessage::system(NER_SYSTEM_PROMPT)];
    for ex in exemplars {
        rendered.push(ChatMessage::user(ner_user_message(&ex.exemplar_text)));
        rendered.push(ChatMessage::assistant(ex.exemplar_entities.to_grammar()));
    }
    rendered.push(ChatMessage::user(ner_user_message(r#abstract)));
    Ok(NerPromptBundle {
        r#abstract: r#abstract.to_string(),
        exemplars: exemplars.to_vec(),
        rendered,
        template_version: NER_TEMPLATE_VERSION.to_string(),
    })
}

/// Inputs of a catalyst recommendation request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecommendationQuery {
    pub product: String,
    pub material_category: String,
    pub control_method_type: String,
}

impl RecommendationQuery {
    pub fn new(product: &str, material_category: &str, control_method_type: &str) -> Self {
        RecommendationQuery {
            product: product.into(),
            material_category: material_category.into(),
            control_method_type: control_method_type.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        [&self.product, &self.material_category, &self.control_method_type]
            .iter()
            .all(|s| !s.trim().is_empty())
    }
}

/// The slot block shared by recommendation prompts and recommendation
/// training samples. The category line is omitted when unknown.
pub fn recommendation_input(product: &str, material_category: Option<&str>, control_method_type: &str) -> String {
    let mut s = format!("Target product: {}\n", product.trim());
    if let Some(cat) = material_category.map(str::trim).filter(|c| !c.is_empty()) {
        s.push_str(&format!("Material category: {cat}\n"));
    }
    s.push_str(&format!("Control method type: {}", control_method_type.trim()));
    s
}

pub fn recommendation_user_message(input: &str) -> String {
    format!("{RECOMMEND_INSTRUCTION}\n\n{input}")
}

pub fn assemble_recommendation_prompt(q: &RecommendationQuery) -> Vec<ChatMessage> {
    let input = recommendation_input(&q.product, Some(&q.material_category), &q.control_method_type);
    vec![ChatMessage::system(RECOMMEND_SYSTEM_PROMPT), ChatMessage::user(recommendation_user_message(&input))]
}

/// Plain-text view of a message list, one `=== role ===` header per message.
/// Used for golden files and logs.
pub fn render_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out.push_str(&format!("=== {role} ===\n{}\n", m.content));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityLabel;

    fn exemplar(id: &str, text: &str) -> Exemplar {
        let mut e = EntityLists::new();
        e.push(EntityLabel::Material, "Cu");
        Exemplar { chunk_id: id.into(), exemplar_text: text.into(), exemplar_entities: e }
    }

    #[test]
    fn zero_shot_has_two_messages() {
        let b = assemble_ner_prompt("A", &[], ShotMode::ZeroShot).unwrap();
        assert_eq!(b.rendered.len(), 2);
        assert_eq!(b.rendered[0].role, Role::System);
        assert_eq!(b.rendered[1].role, Role::User);
        assert!(b.rendered[1].content.ends_with("Abstract:\nA"));
    }

    #[test]
    fn few_shot_keeps_exemplar_order() {
        let exs = [exemplar("e1", "first exemplar"), exemplar("e2", "second exemplar")];
        let b = assemble_ner_prompt("target", &exs, ShotMode::FewShot { k: 2 }).unwrap();
        assert_eq!(b.rendered.len(), 6);
        assert!(b.rendered[1].content.contains("first exemplar"));
        assert!(b.rendered[3].content.contains("second exemplar"));
        assert_eq!(b.rendered[2].role, Role::Assistant);
        assert!(b.rendered[2].content.starts_with("MATERIAL: Cu\n"));
        assert_eq!(b.rendered.last().unwrap().role, Role::User);
    }

    #[test]
    fn mode_mismatch() {
        let exs = [exemplar("e1", "x")];
        assert!(matches!(
            assemble_ner_prompt("t", &exs, ShotMode::ZeroShot),
            Err(PromptError::ExemplarModeMismatch { count: 1, .. })
        ));
        assert!(assemble_ner_prompt("t", &[], ShotMode::FewShot { k: 3 }).is_err());
        let four: Vec<_> = (0..4).map(|i| exemplar(&i.to_string(), "x")).collect();
        assert!(assemble_ner_prompt("t", &four, ShotMode::FewShot { k: 3 }).is_err());
    }

    #[test]
    fn shot_mode_parse_and_bounds() {
        assert_eq!("few".parse::<ShotMode>().unwrap(), ShotMode::FewShot { k: 3 });
        assert_eq!("few_shot:5".parse::<ShotMode>().unwrap(), ShotMode::FewShot { k: 5 });
        assert_eq!("zero_shot".parse::<ShotMode>().unwrap(), ShotMode::ZeroShot);
        assert!("few_shot:9".parse::<ShotMode>().is_err());
        assert!("few_shot:0".parse::<ShotMode>().is_err());
        assert_eq!(serde_json::to_string(&ShotMode::FewShot { k: 3 }).unwrap(), "\"few_shot:3\"");
    }

    #[test]
    fn recommendation_prompt_carries_all_slots() {
        let m = assemble_recommendation_prompt(&RecommendationQuery::new("C2H5OH", "Single metal", "structure control"));
        let user = &m[1].content;
        for slot in ["C2H5OH", "Single metal", "structure control"] {
            assert!(user.contains(slot));
        }
        let m = assemble_recommendation_prompt(&RecommendationQuery::new("CO", "Alloys/composites of two or more metals", "alloy"));
        assert!(m[1].content.contains("Material category: Alloys/composites of two or more metals"));
        assert!(m[1].content.contains("Control method type: alloy"));
    }
}
