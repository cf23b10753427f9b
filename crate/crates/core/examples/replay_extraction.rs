//! Few-shot entity extraction replayed from a recorded transcript: no model
//! server is needed and the output is deterministic.

use std::sync::Arc;

use electrocat::clock::FixedClock;
use electrocat::gateway::{Gateway, Transcript, TranscriptBackend};
use electrocat::index::{HashEmbedder, VectorSearch};
use electrocat::rag::{extract_entities, ExemplarStore, NerConfig, NerPorts, ShotMode};

const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn main() {
    let store = ExemplarStore::load(format!("{DIR}/ablation/exemplars.jsonl").as_ref()).unwrap();
    let index = store.build_index(&HashEmbedder).unwrap();
    let transcript = Transcript::load(format!("{DIR}/ablation/transcript.jsonl").as_ref()).unwrap();
    let gateway = Gateway::new(Arc::new(TranscriptBackend::replay(Arc::new(transcript))));
    let clock = FixedClock::epoch();
    let ports = NerPorts {
        gateway: &gateway,
        embedder: &HashEmbedder,
        index: Some(&index as &dyn VectorSearch),
        exemplars: Some(&store),
        clock: &clock,
    };
    let cfg = NerConfig::new("fine-tuned", ShotMode::FewShot { k: 3 });
    let items = std::fs::read_to_string(format!("{DIR}/extract_items.jsonl")).unwrap();
    for line in items.lines().take(3) {
        let item: serde_json::Value = serde_json::from_str(line).unwrap();
        let record = extract_entities(item["item_id"].as_str().unwrap(), item["abstract"].as_str().unwrap(), &cfg, &ports);
        println!("{} (exemplars {:?})", record.item_id, record.exemplar_ids);
        for (label, values) in record.parsed.expect("replayed").entities.iter() {
            println!("  {:<20} {}", label.display_name(), if values.is_empty() { "-".into() } else { values.join("; ") });
        }
    }
}
