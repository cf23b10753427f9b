//! Catalyst recommendation against a stand-in backend, with the answer parsed
//! into material, control method and rationale.

use std::sync::Arc;

use electrocat::gateway::{CompletionRequest, CompletionResponse, CountingBackend, FinishReason, Gateway};
use electrocat::rag::{recommend, RecommendConfig, RecommendationQuery};

fn main() {
    let backend = CountingBackend::new(|_: &CompletionRequest| {
        Ok(CompletionResponse {
            text: "The most suitable catalyst material for producing C2H4 is Cu(100) nanocubes. \
                   The control method that should be used is facet engineering by halide-assisted growth. \
                   Cu(100) facets favour C-C coupling."
                .into(),
            finish_reason: FinishReason::Stop,
            latency_ms: 3,
            backend_id: "stand-in".into(),
        })
    });
    let gateway = Gateway::new(Arc::new(backend));
    let cfg = RecommendConfig { model: "fine-tuned".into(), temperature: 0.0, max_tokens: 512 };
    let query = RecommendationQuery::new("C2H4", "Single metal", "Facet engineering");
    let answer = recommend(&query, &cfg, &gateway).expect("stand-in backend answers");
    println!("status:    {:?}", answer.status);
    println!("material:  {}", answer.recommended_material);
    println!("control:   {}", answer.control_method_description);
    println!("rationale: {}", answer.rationale);
}
