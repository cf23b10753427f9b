//! Turns extractor spans into a cleaned, sectioned document.

use electrocat::ingest::{ingest_document, CleaningRuleSet, Span, TaggedSpanDocument};

fn span(text: &str, font_size: f64, bold: bool, y: u32) -> Span {
    Span { text: text.into(), font_size, bold, y_order: y }
}

fn main() {
    // The running header repeats on every page and is dropped; the paragraph
    // split across the page break is rejoined.
    let page1 = vec![
        span("J. Electrocatal. 12 (2023)", 8.0, false, 0),
        span("Introduction", 14.0, true, 1),
        span("Copper is the only metal that reduces CO2 to multi-carbon products [1, 2] with", 10.0, false, 2),
    ];
    let page2 = vec![
        span("J. Electrocatal. 12 (2023)", 8.0, false, 0),
        span("appreciable e\u{fb00}iciency.", 10.0, false, 1),
        span("Results", 14.0, true, 2),
        span("Oxide-derived Cu reaches a Faradaic efficiency of 57% for C2H4 in 0.1 M KHCO3.", 10.0, false, 3),
    ];
    let raw = TaggedSpanDocument { doc_id: "doc-0001".into(), pages: vec![page1, page2] };
    let doc = ingest_document(&raw, &CleaningRuleSet::default()).expect("document has body text");
    for section in &doc.sections {
        println!("## {}", section.heading);
        for p in &section.paragraphs {
            println!("{p}\n");
        }
    }
}
