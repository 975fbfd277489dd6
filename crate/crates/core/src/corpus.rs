//! Corpus records, tokenization, ingest, and token statistics.
//!
//! A corpus is a set of patent-style records (id, abstract, outgoing
//! citations) read from a JSONL file, one object per line. Citations are
//! kept only when both endpoints exist in the file; self-citations and
//! duplicate links are dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One patent-style record. `abstract` is a keyword in Rust, hence the
/// field name; the wire format keeps the plain key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatentRecord {
    pub id: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(rename = "citations")]
    pub cited_ids: Vec<String>,
}

/// Deduplicated corpus with a resolved citation relation.
///
/// Both maps are ordered so every iteration over the corpus is
/// deterministic regardless of input file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    patents: BTreeMap<String, PatentRecord>,
    citations: BTreeSet<(String, String)>,
}

/// What `ingest_corpus` kept and what it dropped.
#[derive(Debug)]
pub struct IngestReport {
    pub corpus: Corpus,
    pub dangling_dropped: usize,
    pub self_citations_dropped: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.patents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patents.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.patents.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&PatentRecord> {
        self.patents.get(id)
    }

    pub fn abstract_text(&self, id: &str) -> Result<&str> {
        self.patents
            .get(id)
            .map(|r| r.abstract_text.as_str())
            .ok_or_else(|| Error::UnknownDoc(id.to_string()))
    }

    /// Records in ascending id order.
    pub fn records(&self) -> impl Iterator<Item = &PatentRecord> {
        self.patents.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.patents.keys().map(String::as_str)
    }

    /// Directed citation pairs (citing, cited), deduplicated, both ends
    /// present in the corpus, no self-loops.
    pub fn citations(&self) -> impl Iterator<Item = (&str, &str)> {
        self.citations.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn citation_count(&self) -> usize {
        self.citations.len()
    }
}

/// Lowercase and split on maximal runs of non-alphanumeric characters.
/// Unicode-aware on both counts; empty pieces are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Read a JSONL corpus file. Hard errors: unreadable file, malformed line
/// (reported with its line number), duplicate id, empty abstract, empty
/// corpus. Dangling citations and self-citations are dropped and counted.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<IngestReport> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
    let reader = BufReader::new(file);

    let mut patents: BTreeMap<String, PatentRecord> = BTreeMap::new();
    let mut raw_citations: Vec<(String, String)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(&shown, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(&shown, lineno, e.to_string()))?;
        if record.id.is_empty() {
            return Err(Error::malformed(&shown, lineno, "empty id"));
        }
        if record.abstract_text.trim().is_empty() {
            return Err(Error::malformed(&shown, lineno, "empty abstract"));
        }
        if patents.contains_key(&record.id) {
            return Err(Error::DuplicateId {
                path: shown,
                line: lineno,
                id: record.id,
            });
        }
        for cited in &record.cited_ids {
            raw_citations.push((record.id.clone(), cited.clone()));
        }
        patents.insert(record.id.clone(), record);
    }

    if patents.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut citations = BTreeSet::new();
    let mut dangling = 0usize;
    let mut self_loops = 0usize;
    for (src, dst) in raw_citations {
        if src == dst {
            self_loops += 1;
        } else if !patents.contains_key(&dst) {
            dangling += 1;
        } else {
            citations.insert((src, dst));
        }
    }
    if dangling > 0 {
        log::warn!("{shown}: dropped {dangling} citation(s) to ids not in the corpus");
    }
    if self_loops > 0 {
        log::warn!("{shown}: dropped {self_loops} self-citation(s)");
    }

    // Canonicalize records to the resolved relation: sorted, deduplicated,
    // dangling and self-citations gone. Ingest output is then a fixed point
    // of write + re-ingest.
    for (id, record) in &mut patents {
        record.cited_ids = citations
            .range((id.clone(), String::new())..)
            .take_while(|(src, _)| src == id)
            .map(|(_, dst)| dst.clone())
            .collect();
    }

    Ok(IngestReport {
        corpus: Corpus { patents, citations },
        dangling_dropped: dangling,
        self_citations_dropped: self_loops,
    })
}

/// Serialize in canonical form: records in id order with their resolved,
/// sorted citation lists (ingest already canonicalized them).
/// Re-ingesting the output yields an identical `Corpus`.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&shown, e))?;
    let mut out = BufWriter::new(file);
    for record in corpus.records() {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Invalid(format!("{shown}: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&shown, e))?;
    }
    out.flush().map_err(|e| Error::io(&shown, e))?;
    Ok(())
}

/// Max / min / mean / population standard deviation of a count series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenStats {
    pub max: u64,
    pub min: u64,
    pub mean: f64,
    pub stddev: f64,
}

impl TokenStats {
    /// Errors on an empty series: every statistic here is undefined.
    pub fn from_counts(counts: &[u64]) -> Result<TokenStats> {
        if counts.is_empty() {
            return Err(Error::Invalid("token stats over an empty series".into()));
        }
        let n = counts.len() as f64;
        let sum: u64 = counts.iter().sum();
        let mean = sum as f64 / n;
        let var = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        Ok(TokenStats {
            max: *counts.iter().max().unwrap(),
            min: *counts.iter().min().unwrap(),
            mean,
            stddev: var.sqrt(),
        })
    }
}

/// Token-count statistics over the abstracts, in id order.
pub fn corpus_stats(corpus: &Corpus) -> Result<TokenStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counts: Vec<u64> = corpus
        .records()
        .map(|r| tokenize(&r.abstract_text).len() as u64)
        .collect();
    TokenStats::from_counts(&counts)
}
