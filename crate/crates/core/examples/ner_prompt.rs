//! Prints the zero-shot and few-shot recognition prompts for an abstract.

use electrocat::corpus::EntityLabel;
use electrocat::rag::{assemble_ner_prompt, render_messages, EntityLists, Exemplar, ShotMode};

fn main() {
    let abstract_text = "Bi nanosheets convert CO2 to formate with a Faradaic efficiency of 95% in 1 M KOH.";
    let zero = assemble_ner_prompt(abstract_text, &[], ShotMode::ZeroShot).unwrap();
    println!("{}", render_messages(&zero.rendered));

    let mut gold = EntityLists::new();
    gold.push(EntityLabel::Material, "Ag nanoparticles");
    gold.push(EntityLabel::Product, "CO");
    let exemplar = Exemplar {
        chunk_id: "doc-0007#0".into(),
        exemplar_text: "Ag nanoparticles reduce CO2 to CO.".into(),
        exemplar_entities: gold,
    };
    let few = assemble_ner_prompt(abstract_text, &[exemplar], ShotMode::FewShot { k: 1 }).unwrap();
    println!("{}", render_messages(&few.rendered));
}
