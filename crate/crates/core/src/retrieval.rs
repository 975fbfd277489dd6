//! BM25 inverted index over corpus abstracts.
//!
//! Scores use idf(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5)), which stays
//! positive even for terms present in every document, and the usual
//! saturated term frequency with length normalization.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus};
use crate::{Error, Result};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 5;

const FORMAT_VERSION: u32 = 1;

/// Inverted index. Documents are interned in ascending id order, so index
/// order and id order agree everywhere; postings are sorted by document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    k1: f64,
    b: f64,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.doc_ids.iter().map(String::as_str)
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    fn doc_index(&self, doc_id: &str) -> Result<usize> {
        self.doc_ids
            .binary_search_by(|probe| probe.as_str().cmp(doc_id))
            .map_err(|_| Error::UnknownDoc(doc_id.to_string()))
    }

    pub fn idf(&self, token: &str) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = self.postings.get(token).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score(&self, tf: u32, doc_len: u32) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * doc_len as f64 / self.avg_doc_len;
        tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }

    /// BM25 score of one document for a token sequence. Duplicated query
    /// tokens contribute once per occurrence.
    pub fn bm25_score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64> {
        let idx = self.doc_index(doc_id)?;
        let mut score = 0.0;
        for token in query_tokens {
            let Some(postings) = self.postings.get(token) else {
                continue;
            };
            if let Ok(pos) = postings.binary_search_by_key(&(idx as u32), |&(d, _)| d) {
                let tf = postings[pos].1;
                score += self.idf(token) * self.term_score(tf, self.doc_len[idx]);
            }
        }
        Ok(score)
    }

    /// Top-k document ids for a phrase, by descending score with ties
    /// broken by ascending doc id. Only documents with score > 0 qualify,
    /// so a phrase with no indexed token returns an empty list.
    pub fn retrieve_topk(&self, phrase: &str, k: usize) -> Vec<String> {
        let query = tokenize(phrase);
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for token in &query {
            let Some(postings) = self.postings.get(token) else {
                continue;
            };
            let idf = self.idf(token);
            for &(doc, tf) in postings {
                *scores.entry(doc).or_default() += idf * self.term_score(tf, self.doc_len[doc as usize]);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .take(k)
            .map(|(doc, _)| self.doc_ids[doc as usize].clone())
            .collect()
    }

    /// Like [`Self::retrieve_topk`] but keeps the scores, for callers that
    /// need to display or compare them.
    pub fn retrieve_topk_scored(&self, phrase: &str, k: usize) -> Vec<(String, f64)> {
        self.retrieve_topk(phrase, k)
            .into_iter()
            .map(|id| {
                let score = self.bm25_score(&tokenize(phrase), &id).expect("id from index");
                (id, score)
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(&shown, e))?;
        let wrapper = IndexFile {
            version: FORMAT_VERSION,
            index: self.clone(),
        };
        serde_json::to_writer(BufWriter::new(file), &wrapper)
            .map_err(|e| Error::Invalid(format!("{shown}: {e}")))?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<InvertedIndex> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
        let wrapper: IndexFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Invalid(format!("{shown}: {e}")))?;
        if wrapper.version != FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "{shown}: index format v{} not supported (expected v{FORMAT_VERSION})",
                wrapper.version
            )));
        }
        Ok(wrapper.index)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    index: InvertedIndex,
}

/// Build the index over every abstract in the corpus.
pub fn build_index(corpus: &Corpus, k1: f64, b: f64) -> Result<InvertedIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut doc_ids = Vec::with_capacity(corpus.len());
    let mut doc_len = Vec::with_capacity(corpus.len());
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    for (idx, record) in corpus.records().enumerate() {
        let tokens = tokenize(&record.abstract_text);
        doc_ids.push(record.id.clone());
        doc_len.push(tokens.len() as u32);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        for (token, tf) in counts {
            postings.entry(token).or_default().push((idx as u32, tf));
        }
    }
    let avg_doc_len = doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64;
    Ok(InvertedIndex {
        doc_ids,
        doc_len,
        avg_doc_len,
        postings,
        k1,
        b,
    })
}
