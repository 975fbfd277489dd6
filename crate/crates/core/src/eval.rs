//! Similarity inference and evaluation: correlation metrics against
//! labeled pairs, alignment/uniformity diagnostics, nearest-neighbor
//! queries, and the retrieve-and-average / graph-only reference baselines.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::gnn::forward_ego;
use crate::model::Model;
use crate::phrasegen::normalize_phrase;
use crate::rng::StreamKey;
use crate::training::{train, TrainConfig, TrainOutcome};
use crate::universe::{sample_ego_for_text, PipelineState, SampleParams};
use crate::{Error, Result};

/// Pairs labeled at or above this count as positives for alignment.
pub const POSITIVE_THRESHOLD: f64 = 0.75;
pub const DEFAULT_TOP_N: usize = 5;

/// One labeled phrase pair; `score` is the expert similarity in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhrasePair {
    pub phrase1: String,
    pub phrase2: String,
    pub score: f64,
}

impl PhrasePair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, score: f64) -> PhrasePair {
        PhrasePair { phrase1: a.into(), phrase2: b.into(), score }
    }
}

/// Read `phrase1,phrase2,score` CSV with that exact header.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PhrasePair>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io {
            path: shown.clone(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => Error::malformed(&shown, 0, e.to_string()),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(&shown, 1, e.to_string()))?;
    if headers != vec!["phrase1", "phrase2", "score"] {
        return Err(Error::malformed(
            &shown,
            1,
            format!("expected header phrase1,phrase2,score, found {headers:?}"),
        ));
    }
    let mut pairs = Vec::new();
    for record in reader.deserialize::<PhrasePair>() {
        let pair = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::malformed(&shown, line, e.to_string())
        })?;
        if !(0.0..=1.0).contains(&pair.score) {
            return Err(Error::malformed(
                &shown,
                0,
                format!("score {} out of [0,1] for `{}` / `{}`", pair.score, pair.phrase1, pair.phrase2),
            ));
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyPairs(shown));
    }
    Ok(pairs)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[PhrasePair]) -> Result<()> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::io(&shown, std::io::Error::other(e.to_string())))?;
    for pair in pairs {
        writer
            .serialize(pair)
            .map_err(|e| Error::io(&shown, std::io::Error::other(e.to_string())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(&shown, e))
}

/// Cosine similarity; an all-zero vector compares as 0 to everything.
pub fn infer_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine against an all-zero vector, returning 0");
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

fn pearson_named(x: &[f64], y: &[f64], x_name: &str, y_name: &str) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::Invalid(format!(
            "correlation needs at least 2 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance(x_name.to_string()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance(y_name.to_string()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson_named(x, y, "x", "y")
}

/// 1-based ranks; ties receive the mean of the rank range they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the mean of ranks i+1..=j+1
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    pearson_named(&average_ranks(x), &average_ranks(y), "x", "y")
}

/// (Pearson, Spearman) of predictions against labels.
pub fn correlations(predicted: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    let p = pearson_named(predicted, labels, "predicted", "labels")?;
    let s = pearson_named(
        &average_ranks(predicted),
        &average_ranks(labels),
        "predicted",
        "labels",
    )?;
    Ok((p, s))
}

fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Embedding-quality diagnostics over a phrase vocabulary.
///
/// Embeddings are L2-normalized first (all-zero vectors stay zero).
/// Alignment: mean squared distance over pairs labeled >= `threshold`.
/// Uniformity: log mean of exp(-2 d^2) over all distinct vocabulary pairs.
pub fn alignment_uniformity(
    embeddings: &BTreeMap<String, Vec<f64>>,
    pairs: &[PhrasePair],
    threshold: f64,
) -> Result<(f64, f64)> {
    if embeddings.len() < 2 {
        return Err(Error::TooFewPhrases(embeddings.len()));
    }
    let dim = embeddings.values().next().expect("nonempty").len();
    for v in embeddings.values() {
        if v.len() != dim {
            return Err(Error::DimMismatch { expected: dim, got: v.len() });
        }
    }
    let normalized: BTreeMap<&str, Vec<f64>> = embeddings
        .iter()
        .map(|(k, v)| (k.as_str(), l2_normalize(v)))
        .collect();

    let mut align_sum = 0.0;
    let mut align_count = 0usize;
    for pair in pairs {
        if pair.score < threshold {
            continue;
        }
        let x = normalized
            .get(pair.phrase1.as_str())
            .ok_or_else(|| Error::UnknownPhrase(pair.phrase1.clone()))?;
        let y = normalized
            .get(pair.phrase2.as_str())
            .ok_or_else(|| Error::UnknownPhrase(pair.phrase2.clone()))?;
        align_sum += sq_dist(x, y);
        align_count += 1;
    }
    if align_count == 0 {
        return Err(Error::NoPositivePairs(threshold));
    }
    let alignment = align_sum / align_count as f64;

    let vecs: Vec<&Vec<f64>> = normalized.values().collect();
    let mut unif_sum = 0.0;
    let mut unif_count = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            unif_sum += (-2.0 * sq_dist(vecs[i], vecs[j])).exp();
            unif_count += 1;
        }
    }
    let uniformity = (unif_sum / unif_count as f64).ln();
    Ok((alignment, uniformity))
}

/// Embed one phrase: sample its ego graph (a live virtual focal when the
/// phrase is outside the vocabulary) and read off the focal combination.
pub fn embed_phrase(
    state: &PipelineState,
    model: &Model,
    phrase: &str,
    k: usize,
    sample: SampleParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let lookup = normalize_phrase(phrase, false);
    let ego = sample_ego_for_text(&state.universe, &state.index, &lookup, k, sample, seed)?;
    let states = forward_ego(state, &ego, &model.encoder, &model.gnn)?;
    Ok(states.phi(&ego))
}

/// Correlations plus alignment/uniformity for one model on labeled pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pearson: f64,
    pub spearman: f64,
    pub alignment_loss: f64,
    pub uniformity_loss: f64,
    pub pair_count: usize,
}

fn report_from_embeddings(
    embeddings: &BTreeMap<String, Vec<f64>>,
    pairs: &[PhrasePair],
) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let a = &embeddings[&pair.phrase1];
        let b = &embeddings[&pair.phrase2];
        predicted.push(infer_similarity(a, b)?);
        labels.push(pair.score);
    }
    let (pearson, spearman) = correlations(&predicted, &labels)?;
    let (alignment_loss, uniformity_loss) =
        alignment_uniformity(embeddings, pairs, POSITIVE_THRESHOLD)?;
    Ok(EvalReport {
        pearson,
        spearman,
        alignment_loss,
        uniformity_loss,
        pair_count: pairs.len(),
    })
}

/// Full evaluation of a trained model against labeled pairs.
pub fn evaluate(
    state: &PipelineState,
    model: &Model,
    pairs: &[PhrasePair],
    k: usize,
    sample: SampleParams,
    seed: u64,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs("evaluation pairs".into()));
    }
    let mut embeddings: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for pair in pairs {
        for text in [&pair.phrase1, &pair.phrase2] {
            if !embeddings.contains_key(text) {
                let vec = embed_phrase(state, model, text, k, sample, seed)?;
                embeddings.insert(text.clone(), vec);
            }
        }
    }
    report_from_embeddings(&embeddings, pairs)
}

/// Field-wise arithmetic mean over per-seed reports.
pub fn mean_report(reports: &[EvalReport]) -> EvalReport {
    assert!(!reports.is_empty(), "mean of no reports");
    let n = reports.len() as f64;
    EvalReport {
        pearson: reports.iter().map(|r| r.pearson).sum::<f64>() / n,
        spearman: reports.iter().map(|r| r.spearman).sum::<f64>() / n,
        alignment_loss: reports.iter().map(|r| r.alignment_loss).sum::<f64>() / n,
        uniformity_loss: reports.iter().map(|r| r.uniformity_loss).sum::<f64>() / n,
        pair_count: reports[0].pair_count,
    }
}

/// Rank candidates by similarity to the query phrase. The query itself is
/// excluded; ties break by candidate text ascending.
pub fn query_neighbors(
    state: &PipelineState,
    model: &Model,
    query: &str,
    candidates: &[String],
    top_n: usize,
    k: usize,
    sample: SampleParams,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let query_key = normalize_phrase(query, false);
    let query_vec = embed_phrase(state, model, query, k, sample, seed)?;
    let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut ranked: Vec<(String, f64)> = Vec::new();
    for cand in candidates {
        if normalize_phrase(cand, false) == query_key {
            continue;
        }
        if !cache.contains_key(cand.as_str()) {
            let vec = embed_phrase(state, model, cand, k, sample, seed)?;
            cache.insert(cand, vec);
        }
        let sim = infer_similarity(&query_vec, &cache[cand.as_str()])?;
        ranked.push((cand.clone(), sim));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    Ok(ranked)
}

/// Mix a phrase's text embedding with its top-1 retrieved abstract's:
/// w * f(phrase) + (1 - w) * f(abstract). Falls back to f(phrase) when
/// nothing is retrieved.
pub fn retrieve_avg_embedding(
    state: &PipelineState,
    encoder: &Encoder,
    phrase: &str,
    w: f64,
) -> Result<Vec<f64>> {
    let lookup = normalize_phrase(phrase, false);
    let f_phrase = encoder.embed(&lookup, &lookup)?;
    let top = state.index.retrieve_topk(&lookup, 1);
    let Some(doc_id) = top.first() else {
        log::warn!("no retrieval hit for `{lookup}`, using the phrase embedding alone");
        return Ok(f_phrase);
    };
    let abstract_text = state.corpus.abstract_text(doc_id)?;
    let f_doc = encoder.embed(doc_id, abstract_text)?;
    Ok(f_phrase
        .iter()
        .zip(&f_doc)
        .map(|(p, d)| w * p + (1.0 - w) * d)
        .collect())
}

fn retrieve_avg_embeddings(
    state: &PipelineState,
    encoder: &Encoder,
    pairs: &[PhrasePair],
    w: f64,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut embeddings = BTreeMap::new();
    for pair in pairs {
        for text in [&pair.phrase1, &pair.phrase2] {
            if !embeddings.contains_key(text) {
                embeddings.insert(text.clone(), retrieve_avg_embedding(state, encoder, text, w)?);
            }
        }
    }
    Ok(embeddings)
}

/// Grid-search the mixing weight over {0.0, 0.1, ..., 1.0} by validation
/// Spearman; ties keep the smaller weight. Returns (weight, spearman).
pub fn fit_retrieve_avg_weight(
    state: &PipelineState,
    encoder: &Encoder,
    val_pairs: &[PhrasePair],
) -> Result<(f64, f64)> {
    if val_pairs.is_empty() {
        return Err(Error::EmptyPairs("validation pairs".into()));
    }
    let labels: Vec<f64> = val_pairs.iter().map(|p| p.score).collect();
    let mut best: Option<(f64, f64)> = None;
    for step in 0..=10u32 {
        let w = f64::from(step) / 10.0;
        let embeddings = retrieve_avg_embeddings(state, encoder, val_pairs, w)?;
        let predicted: Vec<f64> = val_pairs
            .iter()
            .map(|p| infer_similarity(&embeddings[&p.phrase1], &embeddings[&p.phrase2]))
            .collect::<Result<_>>()?;
        let sp = match correlations(&predicted, &labels) {
            Ok((_, sp)) => sp,
            Err(Error::ZeroVariance(side)) => {
                log::warn!("weight {w}: zero variance in {side}, skipping");
                continue;
            }
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(_, b)| sp > b) {
            best = Some((w, sp));
        }
    }
    best.ok_or_else(|| Error::Invalid("no usable mixing weight on the grid".into()))
}

/// Evaluate the retrieve-and-average baseline at a fixed weight.
pub fn evaluate_retrieve_avg(
    state: &PipelineState,
    encoder: &Encoder,
    w: f64,
    pairs: &[PhrasePair],
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs("evaluation pairs".into()));
    }
    let embeddings = retrieve_avg_embeddings(state, encoder, pairs, w)?;
    report_from_embeddings(&embeddings, pairs)
}

/// Train the graph-only ablation: frozen random initial embeddings, so
/// every bit of signal must come from the attention layers.
pub fn graph_only_baseline(
    state: &PipelineState,
    cfg: &TrainConfig,
    val_pairs: Option<&[PhrasePair]>,
) -> Result<TrainOutcome> {
    let rf_seed = StreamKey::new(cfg.seed).with_str("graph-only").seed();
    let encoder = Encoder::RandomFrozen { dim: cfg.dim, seed: rf_seed };
    let gnn = crate::gnn::GnnParams::init(cfg.dim, cfg.layers, cfg.seed);
    train(state, Model::new(encoder, gnn)?, cfg, val_pairs)
}
