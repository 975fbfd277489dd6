//! Shared fixture for the criterion benchmarks: a deterministic clustered
//! corpus sized to exercise the retrieval and graph kernels at realistic
//! desk-scale shapes.

use std::io::Write;

use phrasim_core::corpus::ingest_corpus;
use phrasim_core::phrasegen::{build_phrase_set, default_stopwords};
use phrasim_core::retrieval::build_index;
use phrasim_core::universe::{build_universe, PipelineState};
use phrasim_core::Result;

/// Five content tokens; the first is shared by every phrase of the cluster.
fn phrase_text(cluster: usize, p: usize) -> String {
    format!(
        "tag{cluster}x core{cluster}{p:02}a unit{cluster}{p:02}b \
         part{cluster}{p:02}c gear{cluster}{p:02}d"
    )
}

/// JSONL lines for a clustered corpus. Each cluster holds
/// `docs_per_cluster` abstracts over a pool of `docs_per_cluster / 2`
/// phrases; doc k hosts phrases 3k, 3k+1, 3k+2 (mod pool), so every phrase
/// recurs in exactly six documents while the filler tokens are unique per
/// document. Citations stay inside the cluster.
pub fn synthetic_corpus_lines(clusters: usize, docs_per_cluster: usize) -> Vec<String> {
    assert!(docs_per_cluster >= 4 && docs_per_cluster % 2 == 0);
    let pool = docs_per_cluster / 2;
    let mut lines = Vec::with_capacity(clusters * docs_per_cluster);
    for c in 0..clusters {
        for k in 0..docs_per_cluster {
            let g = c * docs_per_cluster + k;
            let hosted: Vec<String> =
                (0..3).map(|j| phrase_text(c, (3 * k + j) % pool)).collect();
            let text = format!(
                "the {} with the {} and the {} for q{g:03}a q{g:03}b q{g:03}c q{g:03}d \
                 of r{g:03}e r{g:03}f r{g:03}g r{g:03}h",
                hosted[0], hosted[1], hosted[2]
            );
            let cites = [
                format!("c{c}d{:02}", (k + 1) % docs_per_cluster),
                format!("c{c}d{:02}", (k + 3) % docs_per_cluster),
            ];
            lines.push(
                serde_json::json!({
                    "id": format!("c{c}d{k:02}"),
                    "abstract": text,
                    "citations": cites,
                })
                .to_string(),
            );
        }
    }
    lines
}

/// Ingest the synthetic corpus and build phrases, index, and universe.
/// Deterministic: same arguments, same state.
pub fn synthetic_state(clusters: usize, docs_per_cluster: usize, k: usize) -> Result<PipelineState> {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("corpus.jsonl");
    let mut f = std::fs::File::create(&path).expect("corpus file");
    for line in synthetic_corpus_lines(clusters, docs_per_cluster) {
        writeln!(f, "{line}").expect("write corpus");
    }
    drop(f);

    let corpus = ingest_corpus(&path)?.corpus;
    let phrases = build_phrase_set(&corpus, default_stopwords(), 3, 2, false);
    let index = build_index(&corpus, 1.2, 0.75)?;
    let universe = build_universe(&corpus, &phrases, &index, k)?;
    Ok(PipelineState { corpus, phrases, index, universe })
}
