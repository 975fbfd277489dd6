//! Shared fixture builders for the integration suites.
#![allow(dead_code)] // each test binary uses a different subset

use std::io::Write as _;

use phrasim_core::corpus::{ingest_corpus, Corpus};
use phrasim_core::phrasegen::{build_phrase_set, default_stopwords};
use phrasim_core::retrieval::{build_index, DEFAULT_B, DEFAULT_K1};
use phrasim_core::universe::{build_universe, PipelineState};

/// Write docs as a JSONL corpus file and ingest it back.
pub fn corpus_from_docs(docs: &[(&str, &str, &[&str])]) -> Corpus {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("corpus.jsonl");
    let mut f = std::fs::File::create(&path).expect("create corpus");
    for (id, text, cites) in docs {
        let row = serde_json::json!({ "id": id, "abstract": text, "citations": cites });
        writeln!(f, "{row}").expect("write corpus line");
    }
    drop(f);
    ingest_corpus(&path).expect("ingest").corpus
}

/// End-to-end state over a small hand-written corpus: a few interleaved
/// topic vocabularies so phrase ego graphs get both retrieval and citation
/// edges at tiny fanouts.
pub fn fixture_state(k: usize) -> PipelineState {
    let docs: Vec<(String, String, Vec<String>)> = (0..10)
        .map(|i| {
            let (a, b) = match i % 3 {
                0 => ("solar panel", "charge controller"),
                1 => ("laser diode", "optical fiber"),
                _ => ("battery cell", "charge controller"),
            };
            // Ring plus a chord so citation neighborhoods are nontrivial.
            let cites = vec![format!("P{:02}", (i + 1) % 10), format!("P{:02}", (i + 3) % 10)];
            (
                format!("P{i:02}"),
                format!("the {a} drives the {b} of unit {}", i),
                cites,
            )
        })
        .collect();
    let borrowed: Vec<(&str, &str, Vec<&str>)> = docs
        .iter()
        .map(|(id, text, cites)| {
            (id.as_str(), text.as_str(), cites.iter().map(String::as_str).collect())
        })
        .collect();
    let as_slices: Vec<(&str, &str, &[&str])> =
        borrowed.iter().map(|(id, text, c)| (*id, *text, c.as_slice())).collect();

    let corpus = corpus_from_docs(&as_slices);
    let phrases = build_phrase_set(&corpus, default_stopwords(), 3, 1, false);
    let index = build_index(&corpus, DEFAULT_K1, DEFAULT_B).expect("index");
    let universe = build_universe(&corpus, &phrases, &index, k).expect("universe");
    PipelineState { corpus, phrases, index, universe }
}
