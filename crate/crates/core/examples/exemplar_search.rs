//! Embeds an exemplar store with the offline embedder and runs a top-k query.

use electrocat::index::{embed, HashEmbedder, VectorSearch};
use electrocat::rag::ExemplarStore;

fn main() {
    let store = ExemplarStore::load(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/ablation/exemplars.jsonl").as_ref())
        .expect("exemplar fixture loads");
    let index = store.build_index(&HashEmbedder).expect("chunks embed");
    let query = std::env::args().nth(1).unwrap_or_else(|| "Bi nanosheets producing formate in a flow cell".into());
    let q = embed(&query, &HashEmbedder).expect("query is not empty");
    println!("query: {query}");
    for hit in index.search_topk(&q, 5).expect("dimensions agree") {
        let text = &store.get(&hit.chunk_id).expect("indexed chunk is stored").exemplar_text;
        println!("{:.4}  {}  {}", hit.score, hit.chunk_id, &text[..text.len().min(90)]);
    }
}
