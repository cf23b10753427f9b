//! Scores expert judgments per category with the modified-correct metric.

use electrocat::eval::{evaluate, load_judged_items_file, render_evaluation_table};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/expert_judgments.jsonl").into());
    let items = load_judged_items_file(path.as_ref()).expect("judgments load");
    let report = evaluate(&items).expect("at least one item");
    print!("{}", render_evaluation_table(&report));
}
