//! RAKE phrase extraction and the corpus-level phrase vocabulary.
//!
//! Candidate phrases are maximal runs of non-stopword tokens between
//! stopwords and punctuation. Each word is scored degree/frequency over the
//! document's phrase-internal co-occurrence graph and a phrase scores the
//! sum of its word scores, so longer informative runs outrank fragments.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::{Error, Result};

/// Candidates longer than this many tokens are discarded before scoring;
/// they are almost always concatenation artifacts, and degree-based scores
/// grow with length, so unbounded runs would crowd out real phrases.
pub const MAX_CANDIDATE_TOKENS: usize = 6;

pub const DEFAULT_TOP_M: usize = 3;
pub const DEFAULT_MIN_FREQ: u32 = 25;

/// Embedded English stopword list, newline-separated, one word per line.
const STOPWORD_TEXT: &str = include_str!("stopwords_en.txt");

static STOPWORDS: LazyLock<HashSet<String>> = LazyLock::new(|| {
    STOPWORD_TEXT
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
});

/// The built-in English stopword list.
pub fn default_stopwords() -> &'static HashSet<String> {
    &STOPWORDS
}

/// SHA-256 of the embedded list, so runs can record exactly which list
/// produced a phrase file.
pub fn stopword_list_hash() -> String {
    let mut h = Sha256::new();
    h.update(STOPWORD_TEXT.as_bytes());
    format!("{:x}", h.finalize())
}

/// Load a newline-separated stopword list from a file.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
    Ok(BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(&shown, e))?
        .into_iter()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// A scored candidate from one document.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseCandidate {
    pub text: String,
    pub rake_score: f64,
    pub source_id: String,
}

/// Lowercased token runs split at punctuation. Whitespace separates tokens
/// within a fragment; any other non-alphanumeric character ends the
/// fragment, mirroring how `corpus::tokenize` treats "acid-absorption" as
/// two tokens but RAKE treats the hyphen as a phrase boundary.
fn fragments(text: &str) -> Vec<Vec<String>> {
    let lower = text.to_lowercase();
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut fragment: Vec<String> = Vec::new();
    let mut token = String::new();
    for c in lower.chars() {
        if c.is_alphanumeric() {
            token.push(c);
        } else {
            if !token.is_empty() {
                fragment.push(std::mem::take(&mut token));
            }
            if !c.is_whitespace() && !fragment.is_empty() {
                out.push(std::mem::take(&mut fragment));
            }
        }
    }
    if !token.is_empty() {
        fragment.push(token);
    }
    if !fragment.is_empty() {
        out.push(fragment);
    }
    out
}

/// Candidate token runs: fragments split further at stopwords, capped at
/// [`MAX_CANDIDATE_TOKENS`].
fn candidates(text: &str, stopwords: &HashSet<String>) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for fragment in fragments(text) {
        for run in fragment.split(|t| stopwords.contains(t.as_str())) {
            if !run.is_empty() && run.len() <= MAX_CANDIDATE_TOKENS {
                out.push(run.to_vec());
            }
        }
    }
    out
}

/// RAKE over one document. Returns up to `top_m` distinct phrases by
/// descending score; ties break by earlier first occurrence, then
/// lexicographically. Word scores are degree/frequency where an occurrence
/// of a word in a candidate of length n contributes n to its degree
/// (co-occurrence with every candidate member, itself included).
pub fn rake_extract(
    source_id: &str,
    text: &str,
    stopwords: &HashSet<String>,
    top_m: usize,
) -> Vec<PhraseCandidate> {
    let cands = candidates(text, stopwords);
    if cands.is_empty() || top_m == 0 {
        return Vec::new();
    }

    let mut freq: HashMap<&str, u64> = HashMap::new();
    let mut degree: HashMap<&str, u64> = HashMap::new();
    for cand in &cands {
        for token in cand {
            *freq.entry(token).or_default() += 1;
            *degree.entry(token).or_default() += cand.len() as u64;
        }
    }

    // Distinct candidates in first-occurrence order. Scores sum the member
    // word scores left to right, with multiplicity.
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut ordered: Vec<(String, f64)> = Vec::new();
    for cand in &cands {
        let joined = cand.join(" ");
        if first_seen.contains_key(&joined) {
            continue;
        }
        let score: f64 = cand
            .iter()
            .map(|t| degree[t.as_str()] as f64 / freq[t.as_str()] as f64)
            .sum();
        first_seen.insert(joined.clone(), ordered.len());
        ordered.push((joined, score));
    }

    let mut ranked: Vec<usize> = (0..ordered.len()).collect();
    ranked.sort_by(|&a, &b| {
        ordered[b]
            .1
            .total_cmp(&ordered[a].1)
            .then(a.cmp(&b))
            .then(ordered[a].0.cmp(&ordered[b].0))
    });
    ranked
        .into_iter()
        .take(top_m)
        .map(|i| PhraseCandidate {
            text: ordered[i].0.clone(),
            rake_score: ordered[i].1,
            source_id: source_id.to_string(),
        })
        .collect()
}

/// Lowercase, collapse whitespace, and optionally strip plural suffixes
/// per token: "ies" becomes "y", otherwise a trailing "s" is dropped, both
/// only on tokens of at least 4 characters.
pub fn normalize_phrase(text: &str, strip_plurals: bool) -> String {
    let mut tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if strip_plurals {
        for t in tokens.iter_mut() {
            if t.chars().count() < 4 {
                continue;
            }
            if let Some(stem) = t.strip_suffix("ies") {
                *t = format!("{stem}y");
            } else if t.ends_with('s') {
                t.pop();
            }
        }
    }
    tokens.join(" ")
}

/// Phrase vocabulary with document frequencies, lexicographically ordered.
/// The position of a phrase in the ordering is its stable index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhraseSet {
    entries: Vec<(String, u32)>,
    index: HashMap<String, u32>,
}

impl PhraseSet {
    fn from_entries(entries: Vec<(String, u32)>) -> PhraseSet {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (p.clone(), i as u32))
            .collect();
        PhraseSet { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.index.contains_key(phrase)
    }

    pub fn index_of(&self, phrase: &str) -> Option<u32> {
        self.index.get(phrase).copied()
    }

    pub fn phrase(&self, idx: u32) -> &str {
        &self.entries[idx as usize].0
    }

    pub fn frequency(&self, phrase: &str) -> Option<u32> {
        self.index.get(phrase).map(|&i| self.entries[i as usize].1)
    }

    /// `(phrase, document frequency)` in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.entries.iter().map(|(p, f)| (p.as_str(), *f))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(&shown, e))?;
        let mut out = BufWriter::new(file);
        for (phrase, freq) in self.iter() {
            writeln!(out, "{phrase}\t{freq}").map_err(|e| Error::io(&shown, e))?;
        }
        out.flush().map_err(|e| Error::io(&shown, e))?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<PhraseSet> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(&shown, e))?;
            if line.is_empty() {
                continue;
            }
            let (phrase, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::malformed(&shown, lineno, "expected phrase<TAB>frequency"))?;
            let freq: u32 = freq
                .parse()
                .map_err(|e| Error::malformed(&shown, lineno, format!("bad frequency: {e}")))?;
            entries.push((phrase.to_string(), freq));
        }
        let sorted = entries.windows(2).all(|w| w[0].0 < w[1].0);
        if !sorted {
            return Err(Error::Invalid(format!(
                "{shown}: phrases must be strictly increasing"
            )));
        }
        Ok(PhraseSet::from_entries(entries))
    }
}

/// True for strings like "42" or "12 34" that carry no lexical content.
fn is_bare_digits(text: &str) -> bool {
    let mut saw = false;
    for c in text.chars() {
        if c == ' ' {
            continue;
        }
        if !c.is_numeric() {
            return false;
        }
        saw = true;
    }
    saw
}

fn is_single_alphabetic(text: &str) -> bool {
    let mut chars = text.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_alphabetic())
}

/// Extract up to `top_m` phrases per document, optionally plural-normalize,
/// count document frequency, and keep phrases seen in at least `min_freq`
/// documents. Bare digit strings and single letters never qualify. An empty
/// result is legal (warned) so that tiny corpora with a high threshold do
/// not abort the pipeline.
pub fn build_phrase_set(
    corpus: &Corpus,
    stopwords: &HashSet<String>,
    top_m: usize,
    min_freq: u32,
    normalize: bool,
) -> PhraseSet {
    let mut doc_freq: HashMap<String, u32> = HashMap::new();
    for record in corpus.records() {
        let mut seen_in_doc: HashSet<String> = HashSet::new();
        for cand in rake_extract(&record.id, &record.abstract_text, stopwords, top_m) {
            let text = normalize_phrase(&cand.text, normalize);
            if text.is_empty() || !seen_in_doc.insert(text.clone()) {
                continue;
            }
            *doc_freq.entry(text).or_default() += 1;
        }
    }

    let mut entries: Vec<(String, u32)> = doc_freq
        .into_iter()
        .filter(|(p, f)| *f >= min_freq && !is_bare_digits(p) && !is_single_alphabetic(p))
        .collect();
    entries.sort();
    if entries.is_empty() {
        log::warn!("phrase set is empty: no candidate reached document frequency {min_freq}");
    }
    PhraseSet::from_entries(entries)
}

/// Token-count statistics over the phrases themselves.
pub fn phrase_stats(phrases: &PhraseSet) -> Result<crate::corpus::TokenStats> {
    if phrases.is_empty() {
        return Err(Error::EmptyPhraseSet);
    }
    let counts: Vec<u64> = phrases
        .iter()
        .map(|(p, _)| p.split_whitespace().count() as u64)
        .collect();
    crate::corpus::TokenStats::from_counts(&counts)
}
