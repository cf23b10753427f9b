//! Runs the model × prompting ablation from a replay transcript and
//! per-configuration judgment files.

use std::sync::Arc;

use electrocat::clock::FixedClock;
use electrocat::eval::{
    load_eval_items, load_judged_items_file, render_ablation_table, run_ablation, AblationConfig, AblationPorts,
    FixtureJudgments, ModelIds,
};
use electrocat::gateway::{Gateway, Transcript, TranscriptBackend};
use electrocat::index::HashEmbedder;
use electrocat::rag::{ExemplarStore, NerPorts};
use electrocat::workbench::config_slug;

const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/ablation");

fn main() {
    let items = load_eval_items(&std::fs::read_to_string(format!("{DIR}/eval_items.jsonl")).unwrap(), "eval_items").unwrap();
    let store = ExemplarStore::load(format!("{DIR}/exemplars.jsonl").as_ref()).unwrap();
    let index = store.build_index(&HashEmbedder).unwrap();
    let grid = AblationConfig::canonical_grid(3);
    let mut judgments = FixtureJudgments::new();
    for config in &grid {
        let path = format!("{DIR}/judgments/{}.jsonl", config_slug(config));
        judgments.insert(config, load_judged_items_file(path.as_ref()).unwrap());
    }
    let transcript = Transcript::load(format!("{DIR}/transcript.jsonl").as_ref()).unwrap();
    let gateway = Gateway::new(Arc::new(TranscriptBackend::replay(Arc::new(transcript))));
    let clock = FixedClock::epoch();
    let models = ModelIds { baseline: "baseline".into(), fine_tuned: "fine-tuned".into() };
    let ports = AblationPorts {
        ner: NerPorts { gateway: &gateway, embedder: &HashEmbedder, index: Some(&index), exemplars: Some(&store), clock: &clock },
        models: &models,
        max_tokens: 512,
        workers: 4,
    };
    let report = run_ablation(&grid, &items, &ports, &judgments).expect("fixtures are complete");
    print!("{}", render_ablation_table(&report));
}
