//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs with the default test harness disabled so the lines are
//! always printed.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use electrocat::clock::FixedClock;
use electrocat::corpus::{corpus_stats, emit_corpus, parse_corpus, EntityLabel, EntityRecord};
use electrocat::dataset::{
    build_ner_samples, build_recommendation_samples, dedup_filter, emit_dataset, InstructionSample, MaterialCategories,
    ProcessRecord, ProductYield, Provenance, TaskTag, TrainingManifest, BUILDER_VERSION,
};
use electrocat::eval::{
    evaluate, load_eval_items, load_judged_items_file, render_ablation_table, run_ablation, AblationConfig, AblationPorts,
    FixtureJudgments, ModelIds,
};
use electrocat::gateway::{CountingBackend, Gateway, GatewayError, Transcript, TranscriptBackend, TranscriptMode};
use electrocat::index::{embed, FlatIndex, HashEmbedder, IndexedChunk, VectorSearch};
use electrocat::ingest::{DocumentMeta, StructuredDocument};
use electrocat::rag::{
    extract_batch, parse_extraction, parse_recommendation, ExemplarStore, ExtractionItem, NerConfig, NerPorts, RunStatus,
    ShotMode,
};
use electrocat::text::normalize;
use electrocat::workbench::config_slug;
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type DatasetInputs = (Vec<EntityRecord>, Vec<StructuredDocument>, Vec<ProcessRecord>);
type Criterion = (&'static str, fn() -> Outcome);

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn judgment_scoring() -> Outcome {
    let start = Instant::now();
    let items = load_judged_items_file(&common::fixture("expert_judgments.jsonl")).map_err(err)?;
    let report = evaluate(&items).map_err(err)?;
    let expected = [75u64, 65, 85, 90, 50, 80, 60, 45];
    check(report.categories.len() == 8, || format!("{} category rows", report.categories.len()))?;
    for (row, pct) in report.categories.iter().zip(expected) {
        check(row.modified_accuracy == Ratio::new(pct, 100), || {
            format!("{}: {} != {pct}%", row.category, row.modified_accuracy)
        })?;
    }
    let o = &report.overall;
    check(o.count == 160 && o.modified_correct == 110 && o.modified_accuracy == Ratio::new(110, 160), || {
        format!("overall {}/{}", o.modified_correct, o.count)
    })?;
    check(o.percent() == "68.75%", || format!("overall rendered {}", o.percent()))?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("per-category 75/65/85/90/50/80/60/45, overall 110/160 = {} in {:?}", o.percent(), start.elapsed()))
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let dir = common::fixture("ablation");
    let items = load_eval_items(&fs::read_to_string(dir.join("eval_items.jsonl")).map_err(err)?, "eval_items").map_err(err)?;
    let store = ExemplarStore::load(&dir.join("exemplars.jsonl")).map_err(err)?;
    let embedder = HashEmbedder;
    let index = store.build_index(&embedder).map_err(err)?;
    let grid = AblationConfig::canonical_grid(3);
    let mut judgments = FixtureJudgments::new();
    for config in &grid {
        let path = dir.join("judgments").join(format!("{}.jsonl", config_slug(config)));
        judgments.insert(config, load_judged_items_file(&path).map_err(err)?);
    }
    let transcript = Arc::new(Transcript::load(&dir.join("transcript.jsonl")).map_err(err)?);
    let gateway = Gateway::new(Arc::new(TranscriptBackend::replay(transcript)));
    let clock = FixedClock::epoch();
    let models = ModelIds { baseline: "baseline".into(), fine_tuned: "fine-tuned".into() };
    let ports = AblationPorts {
        ner: NerPorts { gateway: &gateway, embedder: &embedder, index: Some(&index), exemplars: Some(&store), clock: &clock },
        models: &models,
        max_tokens: 512,
        workers: 4,
    };
    let report = run_ablation(&grid, &items, &ports, &judgments).map_err(err)?;
    let keys: Vec<_> = report.rows.iter().map(|r| r.config).collect();
    check(keys == grid, || format!("row order {keys:?}"))?;
    let pcts: Vec<String> = report.rows.iter().map(|r| r.percent()).collect();
    check(pcts == ["36.88%", "41.25%", "53.12%", "68.75%"], || format!("got {pcts:?}"))?;
    check(report.rows.windows(2).all(|w| w[0].modified_accuracy < w[1].modified_accuracy), || "not strictly increasing".into())?;
    let table = render_ablation_table(&report);
    check(pcts.iter().all(|p| table.contains(p.as_str())), || "table rendering".into())?;
    within(start, Duration::from_secs(5))?;
    Ok(format!("{} in {:?}", pcts.join(" < "), start.elapsed()))
}

const WORDS: &[&str] = &[
    "copper", "silver", "formate", "ethylene", "oxide", "nanowire", "facet", "alloy", "KHCO3", "flow", "cell", "current",
    "density", "potential", "RHE", "carbon", "defect", "grain", "boundary", "selectivity", "Faradaic", "efficiency",
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..12);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Brute-force cosine ranking written independently of the index.
fn oracle_ranking(chunks: &[(String, Vec<f64>, f64)], q: &[f64]) -> Vec<String> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, &str)> = chunks
        .iter()
        .map(|(id, v, vn)| {
            let s = if qn == 0.0 || *vn == 0.0 { 0.0 } else { (q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (qn * vn)).clamp(-1.0, 1.0) };
            (s, id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().map(|(_, id)| id.to_string()).collect()
}

fn retrieval() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let embedder = HashEmbedder;
    let index = FlatIndex::new(256);
    let mut texts: Vec<String> = Vec::new();
    let mut chunks = Vec::new();
    for i in 0..1000 {
        // Every tenth chunk repeats an earlier text, forcing exact score ties.
        let text = if i % 10 == 9 { texts[rng.gen_range(0..texts.len())].clone() } else { random_text(&mut rng) };
        let id = format!("c{:04}", rng.gen_range(0..100_000) * 1000 + i);
        let vector = embed(&text, &embedder).map_err(err)?;
        chunks.push((id.clone(), vector.values().to_vec(), vector.values().iter().map(|x| x * x).sum::<f64>().sqrt()));
        index.upsert(IndexedChunk { chunk_id: id, doc_id: format!("d{i}"), text: text.clone(), vector }).map_err(err)?;
        texts.push(text);
    }
    let (mut agree, mut total) = (0, 0);
    for qi in 0..200 {
        let text = if qi % 4 == 0 { texts[rng.gen_range(0..texts.len())].clone() } else { random_text(&mut rng) };
        let q = embed(&text, &embedder).map_err(err)?;
        let oracle = oracle_ranking(&chunks, q.values());
        for k in [1, 5, 20] {
            let got: Vec<String> = index.search_topk(&q, k).map_err(err)?.into_iter().map(|h| h.chunk_id).collect();
            total += 1;
            if got == oracle[..k] {
                agree += 1;
            }
        }
    }
    check(agree == total, || format!("{agree}/{total} queries match the oracle"))?;
    within(start, Duration::from_secs(10))?;
    Ok(format!("{agree}/{total} top-k lists identical to brute force in {:?}", start.elapsed()))
}

fn golden_prompts() -> Outcome {
    for (path, rendered) in common::rendered_goldens() {
        let golden = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        check(golden == rendered.as_bytes(), || format!("{} differs", path.display()))?;
    }
    Ok("zero-shot, few-shot (k=3) and recommendation prompts byte-identical".into())
}

const STRESS: &[&str] = &["\"", "\"\"", ",", "\n", "\r\n", "Å", "µ", "CO₂", "é", "→", "😀", "'", ";", "\t", " "];

fn stress_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop_oneof![3 => "[a-zA-Z0-9]{1,6}", 2 => prop::sample::select(STRESS).prop_map(str::to_string)], 1..8)
        .prop_map(|parts| parts.concat())
}

fn record_strategy() -> impl Strategy<Value = EntityRecord> {
    let label = prop::sample::select(EntityLabel::ALL.to_vec());
    ("[A-Za-z0-9]{1,4}", stress_text(), stress_text(), stress_text(), label, 1u8..=3, "[a-z0-9-]{1,8}").prop_map(
        |(core, entity_tail, before, after, label, rank, doc)| {
            let entity = format!("{core}{entity_tail}");
            let rank = if label.allows_rank(rank) { rank } else { 1 };
            EntityRecord::new(entity.clone(), label, format!("{before}{entity}{after}"), doc).with_rank(rank)
        },
    )
}

fn corpus() -> Outcome {
    let text = fs::read_to_string(common::fixture("entity_corpus.csv")).map_err(err)?;
    let parsed = parse_corpus(&text).map_err(err)?;
    check(parsed.rejects.is_empty(), || format!("{} rejected rows", parsed.rejects.len()))?;
    let stats = corpus_stats(&parsed.records);
    let expected = [1092, 1086, 1340, 1135, 435, 475, 228, 393, 801];
    for (label, want) in EntityLabel::ALL.iter().zip(expected) {
        check(stats.per_label[label] == want, || format!("{label}: {} != {want}", stats.per_label[label]))?;
    }
    check(stats.total == 6985, || format!("total {}", stats.total))?;

    let mut runner = TestRunner::new(Config { cases: 16, failure_persistence: None, ..Config::default() });
    runner
        .run(&prop::collection::vec(record_strategy(), 1000), |records| {
            let back = parse_corpus(&emit_corpus(&records)).expect("header present");
            prop_assert!(back.rejects.is_empty(), "rejects: {:?}", back.rejects.first());
            prop_assert_eq!(back.records, records);
            Ok(())
        })
        .map_err(err)?;
    Ok("9 label counts match, total 6985; CSV round-trip holds on 16 × 1000 stressed records".into())
}

fn random_sample(rng: &mut ChaCha8Rng) -> InstructionSample {
    // A small pool of texts makes exact duplicates common.
    let pick = |rng: &mut ChaCha8Rng, pool: &[&str]| pool[rng.gen_range(0..pool.len())].to_string();
    let output = match rng.gen_range(0..20) {
        0 => String::new(),
        1 => "short".into(),
        2 => "has a \u{7} bell character in it".into(),
        _ => pick(rng, &["The most suitable catalyst is Cu.", "MATERIAL: Ag\nPRODUCT: CO", "Sn oxide is recommended here.", "Use Bi nanosheets for formate."]),
    };
    InstructionSample {
        instruction: pick(rng, &["Extract the entities.", "Recommend a catalyst."]),
        input: format!("input {}", rng.gen_range(0..40)),
        output,
        task_tag: if rng.gen_bool(0.5) { TaskTag::Ner } else { TaskTag::Recommend },
        provenance: Provenance { doc_id: format!("d{}", rng.gen_range(0..500)), builder_version: BUILDER_VERSION.into() },
    }
}

/// Documents, corpus records and process records derived from the exemplar fixture.
fn dataset_inputs() -> Result<DatasetInputs, String> {
    let store = ExemplarStore::load(&common::fixture("ablation/exemplars.jsonl")).map_err(err)?;
    let (mut corpus, mut docs, mut processes) = (Vec::new(), Vec::new(), Vec::new());
    for e in store.iter() {
        docs.push(StructuredDocument {
            doc_id: e.doc_id.clone(),
            meta: DocumentMeta {
                doc_id: e.doc_id.clone(),
                title: format!("Study {}", e.doc_id),
                r#abstract: e.exemplar_text.clone(),
                journal: None,
                year: None,
                open_access: true,
            },
            sections: vec![],
        });
        for (label, values) in e.exemplar_entities.iter() {
            for (i, v) in values.iter().enumerate() {
                corpus.push(EntityRecord::new(v, label, e.exemplar_text.clone(), e.doc_id.clone()).with_rank(i as u8 + 1));
            }
        }
        let first = |l: EntityLabel| e.exemplar_entities.get(l).first().cloned();
        if let (Some(material), Some(control), Some(product)) =
            (first(EntityLabel::Material), first(EntityLabel::ControlMethod), first(EntityLabel::Product))
        {
            processes.push(ProcessRecord {
                doc_id: e.doc_id.clone(),
                material,
                control_method: control,
                products: vec![ProductYield { name: product, faradaic_efficiency: first(EntityLabel::FaradaicEfficiency) }],
                cell_setup: first(EntityLabel::CellSetup),
                electrolyte: first(EntityLabel::Electrolyte),
                synthesis_method: None,
                current_density: first(EntityLabel::CurrentDensity),
                voltage: first(EntityLabel::Voltage),
            });
        }
    }
    Ok((corpus, docs, processes))
}

fn emit_once(dest: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let (corpus, docs, processes) = dataset_inputs()?;
    let mut samples = build_ner_samples(&corpus, &docs).map_err(err)?;
    samples.extend(build_recommendation_samples(&processes, &MaterialCategories::default()));
    let (kept, _) = dedup_filter(&samples);
    let emitted = emit_dataset(&kept, &TrainingManifest::new("base-model"), dest).map_err(err)?;
    Ok((fs::read(emitted.dataset_path).map_err(err)?, fs::read(emitted.manifest_path).map_err(err)?))
}

fn dataset() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let samples: Vec<_> = (0..10_000).map(|_| random_sample(&mut rng)).collect();
    let (kept, report) = dedup_filter(&samples);
    check(kept.len() + report.len() == samples.len(), || format!("{} kept + {} dropped != {}", kept.len(), report.len(), samples.len()))?;
    check(report.duplicates() > 0 && report.len() > report.duplicates(), || "fixture exercises both drop kinds".into())?;
    let (again, report2) = dedup_filter(&kept);
    check(again == kept && report2.is_empty(), || "not idempotent".into())?;

    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let first = emit_once(a.path())?;
    let second = emit_once(b.path())?;
    check(first == second, || "dataset or manifest bytes differ between runs".into())?;

    let m = TrainingManifest::new("base-model");
    check(
        (m.batch_size, m.learning_rate, m.lora_r, m.lora_alpha, m.lora_dropout) == (10, 3e-4, 8, 32, 0.1),
        || format!("manifest defaults {m:?}"),
    )?;
    Ok(format!(
        "10000 samples → {} kept + {} dropped, idempotent; {} dataset bytes stable; defaults 10/3e-4/8/32/0.1",
        kept.len(),
        report.len(),
        first.0.len()
    ))
}

fn replay_extract() -> Outcome {
    let dir = common::fixture("ablation");
    let items = common::fixture("extract_items.jsonl");
    let n_items = fs::read_to_string(&items).map_err(err)?.lines().count();
    check(n_items == 20, || format!("{n_items} items"))?;

    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().map_err(err)?;
        let args: Vec<String> = vec![
            "electrocat".into(),
            "--transcript".into(),
            dir.join("transcript.jsonl").display().to_string(),
            "--transcript-mode".into(),
            "replay".into(),
            "--out".into(),
            out.path().display().to_string(),
            "extract".into(),
            "--items".into(),
            items.display().to_string(),
            "--exemplars".into(),
            dir.join("exemplars.jsonl").display().to_string(),
        ];
        let code = electrocat::cli::run_from(args);
        check(code == 0, || format!("extract exited {code}"))?;
        outputs.push(fs::read(out.path().join("run_records.jsonl")).map_err(err)?);
    }
    check(outputs[0] == outputs[1], || "run records differ between runs".into())?;

    // Same extraction with a live backend behind the replay layer, counting calls.
    let live = Arc::new(CountingBackend::new(|_: &_| Err(GatewayError::BackendUnavailable("network disabled".into()))));
    let transcript = Arc::new(Transcript::load(&dir.join("transcript.jsonl")).map_err(err)?);
    let backend = TranscriptBackend::with_mode(TranscriptMode::Replay, transcript, Some(live.clone()));
    let gateway = Gateway::new(Arc::new(backend));
    let store = ExemplarStore::load(&dir.join("exemplars.jsonl")).map_err(err)?;
    let embedder = HashEmbedder;
    let index = store.build_index(&embedder).map_err(err)?;
    let clock = FixedClock::epoch();
    let ports = NerPorts { gateway: &gateway, embedder: &embedder, index: Some(&index as &dyn VectorSearch), exemplars: Some(&store), clock: &clock };
    let batch: Vec<ExtractionItem> = fs::read_to_string(&items)
        .map_err(err)?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(err))
        .collect::<Result<_, _>>()?;
    let records = extract_batch(&batch, &NerConfig::new("fine-tuned", ShotMode::FewShot { k: 3 }), &ports, 4);
    check(records.iter().all(|r| r.status == RunStatus::Ok), || "a replayed extraction failed".into())?;
    check(live.calls() == 0, || format!("{} live calls", live.calls()))?;
    Ok(format!("20 abstracts, two runs byte-identical ({} bytes), 0 live backend calls", outputs[0].len()))
}

const FRAGMENTS: &[&str] = &[
    "MATERIAL:", "PRODUCT: ", "FARADAIC EFFICIENCY:", "VOLTAGE：", "CELL SETUP:", "**Material**:", "- CONTROL METHOD:", "; ", "|",
    "\n", "\r\n", "None", "n/a", ".", " ", "Cu", "CO2", "µA", "Å", "é", "\t", "SYNTHESIS METHOD:", "FOO BAR:",
];

fn random_input(rng: &mut ChaCha8Rng) -> String {
    let mut bytes = Vec::new();
    for _ in 0..rng.gen_range(0..40) {
        if rng.gen_bool(0.5) {
            bytes.extend_from_slice(FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())].as_bytes());
        } else {
            bytes.extend((0..rng.gen_range(1..8)).map(|_| rng.gen::<u8>()));
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

fn parse_totality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut values_seen = 0;
    for i in 0..10_000 {
        let input = random_input(&mut rng);
        let haystack = normalize(&input);
        let parsed = catch_unwind(AssertUnwindSafe(|| (parse_extraction(&input), parse_recommendation(&input))))
            .map_err(|_| format!("parser panicked on input #{i}: {input:?}"))?;
        let (ner, rec) = parsed;
        for v in ner.entities.values() {
            values_seen += 1;
            check(haystack.contains(&normalize(v)), || format!("input #{i}: value {v:?} not in input"))?;
        }
        let material = normalize(&rec.recommended_material);
        check(haystack.contains(&material), || format!("input #{i}: material {material:?} not in input"))?;
    }
    Ok(format!("10000 random inputs parsed, {values_seen} extracted values all present in their input"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 judgment scoring", judgment_scoring),
        ("2 ablation", ablation),
        ("3 retrieval oracle", retrieval),
        ("4 golden prompts", golden_prompts),
        ("5 corpus stats and CSV round-trip", corpus),
        ("6 dataset filter and emission", dataset),
        ("7 replayed extraction", replay_extract),
        ("8 parse totality", parse_totality),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match &outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
