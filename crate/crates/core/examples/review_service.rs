//! Starts the review service on a local port with replayed model responses.
//! Try `curl -X POST localhost:8080/runs -d @run.json -H 'content-type: application/json'`.

use std::sync::Arc;

use electrocat::clock::SystemClock;
use electrocat::config::WorkbenchConfig;
use electrocat::gateway::{Gateway, Transcript, TranscriptBackend};
use electrocat::index::{HashEmbedder, VectorSearch};
use electrocat::rag::ExemplarStore;
use electrocat::service::serve;
use electrocat::workbench::{Services, Store, Workbench};

const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/ablation");

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let store = ExemplarStore::load(format!("{DIR}/exemplars.jsonl").as_ref()).unwrap();
    let index = store.build_index(&HashEmbedder).unwrap();
    let transcript = Transcript::load(format!("{DIR}/transcript.jsonl").as_ref()).unwrap();
    let services = Services {
        gateway: Arc::new(Gateway::new(Arc::new(TranscriptBackend::replay(Arc::new(transcript))))),
        embedder: Arc::new(HashEmbedder),
        index: Some(Arc::new(index) as Arc<dyn VectorSearch>),
        exemplars: Some(Arc::new(store)),
        clock: Arc::new(SystemClock),
    };
    let wb = Workbench::new(Store::in_memory(), services, WorkbenchConfig::default());
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());
    println!("listening on http://{addr} (Ctrl-C to stop)");
    serve(Arc::new(wb), addr.parse().expect("valid socket address")).await
}
