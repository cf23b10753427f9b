//! Compiles recognition and recommendation samples, filters them, and writes
//! the dataset with its fine-tuning manifest.

use electrocat::corpus::{EntityLabel, EntityRecord};
use electrocat::dataset::{
    build_ner_samples, build_recommendation_samples, dedup_filter, emit_dataset, MaterialCategories, ProcessRecord,
    ProductYield, TrainingManifest,
};
use electrocat::ingest::{DocumentMeta, StructuredDocument};

fn main() {
    let abstract_text = "Oxide-derived Cu converts CO2 to C2H4 with a Faradaic efficiency of 57% in 0.1 M KHCO3.";
    let doc = StructuredDocument {
        doc_id: "doc-0001".into(),
        meta: DocumentMeta {
            doc_id: "doc-0001".into(),
            title: "Oxide-derived copper for ethylene".into(),
            r#abstract: abstract_text.into(),
            journal: None,
            year: Some(2023),
            open_access: true,
        },
        sections: vec![],
    };
    let corpus = vec![
        EntityRecord::new("Oxide-derived Cu", EntityLabel::Material, abstract_text, "doc-0001"),
        EntityRecord::new("C2H4", EntityLabel::Product, abstract_text, "doc-0001"),
        EntityRecord::new("57%", EntityLabel::FaradaicEfficiency, abstract_text, "doc-0001"),
        EntityRecord::new("0.1 M KHCO3", EntityLabel::Electrolyte, abstract_text, "doc-0001"),
    ];
    let process = ProcessRecord {
        doc_id: "doc-0001".into(),
        material: "Oxide-derived Cu".into(),
        control_method: "oxidation-reduction cycling".into(),
        products: vec![ProductYield { name: "C2H4".into(), faradaic_efficiency: Some("57%".into()) }],
        cell_setup: Some("H-cell".into()),
        electrolyte: Some("0.1 M KHCO3".into()),
        synthesis_method: Some("thermal oxidation".into()),
        current_density: None,
        voltage: Some("-1.05 V vs. RHE".into()),
    };

    let mut samples = build_ner_samples(&corpus, &[doc]).unwrap();
    samples.extend(build_recommendation_samples(&[process.clone(), process], &MaterialCategories::default()));
    let (kept, drops) = dedup_filter(&samples);
    println!("{} samples, {} kept, {} dropped", samples.len(), kept.len(), drops.len());

    let dest = std::env::temp_dir().join("electrocat-dataset-example");
    let emitted = emit_dataset(&kept, &TrainingManifest::new("base-model"), &dest).unwrap();
    println!("{}", std::fs::read_to_string(&emitted.dataset_path).unwrap());
    println!("{}", std::fs::read_to_string(&emitted.manifest_path).unwrap());
}
