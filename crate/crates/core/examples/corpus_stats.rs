//! Loads an annotated corpus CSV and prints per-label entity counts.

use electrocat::corpus::{corpus_stats, parse_corpus};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/entity_corpus.csv").into());
    let text = std::fs::read_to_string(&path).expect("corpus file is readable");
    let parsed = parse_corpus(&text).expect("corpus has a header");
    let stats = corpus_stats(&parsed.records);
    for (label, count) in &stats.per_label {
        println!("{:<22}{count:>6}", label.display_name());
    }
    println!("{:<22}{:>6}", "TOTAL", stats.total);
    println!("rejected rows: {}", parsed.rejects.len());
}
