//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use electrocat::corpus::EntityLabel;
use electrocat::rag::{
    assemble_ner_prompt, assemble_recommendation_prompt, render_messages, EntityLists, Exemplar, RecommendationQuery,
    ShotMode, NER_TEMPLATE_VERSION, RECOMMEND_TEMPLATE_VERSION,
};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub const GOLDEN_ABSTRACT: &str = "Oxide-derived Cu nanowires convert CO2 to C2H4 with a Faradaic efficiency of 57.3% \
at -1.05 V vs. RHE in 0.1 M KHCO3 using an H-cell. A partial current density of 21 mA cm-2 is reached.";

fn lists(pairs: &[(EntityLabel, &str)]) -> EntityLists {
    let mut l = EntityLists::new();
    for (label, v) in pairs {
        l.push(*label, *v);
    }
    l
}

pub fn golden_exemplars() -> Vec<Exemplar> {
    use EntityLabel::*;
    vec![
        Exemplar {
            chunk_id: "doc-0001#0".into(),
            exemplar_text: "Ag nanoparticles reduce CO2 to CO with a Faradaic efficiency of 92% at -0.8 V vs. RHE in 0.5 M KHCO3.".into(),
            exemplar_entities: lists(&[
                (Material, "Ag nanoparticles"),
                (Product, "CO"),
                (FaradaicEfficiency, "92%"),
                (Voltage, "-0.8 V vs. RHE"),
                (Electrolyte, "0.5 M KHCO3"),
            ]),
        },
        Exemplar {
            chunk_id: "doc-0002#0".into(),
            exemplar_text: "Bi nanosheets obtained by defect engineering produce formate (FE 95%) at 200 mA cm-2 in a flow cell with 1 M KOH.".into(),
            exemplar_entities: lists(&[
                (Material, "Bi nanosheets"),
                (ControlMethod, "defect engineering"),
                (Product, "formate"),
                (FaradaicEfficiency, "95%"),
                (Electrolyte, "1 M KOH"),
                (CurrentDensity, "200 mA cm-2"),
                (CellSetup, "flow cell"),
            ]),
        },
        Exemplar {
            chunk_id: "doc-0003#0".into(),
            exemplar_text: "A Pd-Au alloy catalyst yields CO and H2, with CO dominating at low overpotential.".into(),
            exemplar_entities: lists(&[(Material, "Pd-Au alloy"), (ControlMethod, "alloying"), (Product, "CO")]),
        },
    ]
}

pub fn golden_query() -> RecommendationQuery {
    RecommendationQuery::new("C2H4", "Single metal", "Facet engineering")
}

/// (golden file name, freshly rendered prompt) for every template.
pub fn rendered_goldens() -> Vec<(PathBuf, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let zero = assemble_ner_prompt(GOLDEN_ABSTRACT, &[], ShotMode::ZeroShot).unwrap();
    let few = assemble_ner_prompt(GOLDEN_ABSTRACT, &golden_exemplars(), ShotMode::FewShot { k: 3 }).unwrap();
    vec![
        (dir.join(format!("{NER_TEMPLATE_VERSION}_zero_shot.txt")), render_messages(&zero.rendered)),
        (dir.join(format!("{NER_TEMPLATE_VERSION}_few_shot_k3.txt")), render_messages(&few.rendered)),
        (
            dir.join(format!("{RECOMMEND_TEMPLATE_VERSION}.txt")),
            render_messages(&assemble_recommendation_prompt(&golden_query())),
        ),
    ]
}
