//! Acceptance gate: ten numbered criteria, one test each. Every test prints
//! a single `ACCEPTANCE criterion NN ...: PASS` line (visible with
//! `--nocapture`); a failure panics with the matching FAIL line.

mod common;

use std::collections::HashSet;
use std::fs;
use std::sync::LazyLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phrasim_cli::config::PipelineConfig;
use phrasim_cli::pipeline::{artifacts, run_pipeline};
use phrasim_core::corpus::ingest_corpus;
use phrasim_core::encoder::{init_encoder, Encoder};
use phrasim_core::eval::{
    evaluate, fit_retrieve_avg_weight, graph_only_baseline, infer_similarity, pearson, spearman,
    write_pairs, EvalReport, PhrasePair,
};
use phrasim_core::gnn::{backward, forward_ego, gat_aggregate, gat_attention, GnnParams, Grads};
use phrasim_core::model::Model;
use phrasim_core::phrasegen::{
    build_phrase_set, default_stopwords, rake_extract, MAX_CANDIDATE_TOKENS,
};
use phrasim_core::retrieval::build_index;
use phrasim_core::training::{
    batch_forward, build_batch, citation_loss, dis, retrieval_loss, supervised_loss, total_loss,
    train, train_supervised, triplet_loss, TrainConfig, TripletBatch,
};
use phrasim_core::universe::{
    build_universe, sample_ego, PipelineState, SampleParams,
};

fn pass(n: usize, name: &str, detail: impl AsRef<str>) {
    println!("ACCEPTANCE criterion {n:02} ({name}): PASS - {}", detail.as_ref());
}

macro_rules! ensure {
    ($cond:expr, $n:expr, $name:expr, $($msg:tt)+) => {
        assert!(
            $cond,
            "ACCEPTANCE criterion {:02} ({}): FAIL - {}",
            $n, $name, format!($($msg)+)
        );
    };
}

// ---------------------------------------------------------------------------
// Criterion 1: BM25 ranking matches a brute-force scorer.
// ---------------------------------------------------------------------------

struct RawDoc {
    id: String,
    tokens: Vec<String>,
}

/// Direct per-document scoring over raw token lists; no index structures.
fn brute_force_topk(docs: &[RawDoc], query: &[String], k: usize) -> Vec<(String, f64)> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.tokens.len()).sum::<usize>() as f64 / n;
    let mut scored = Vec::new();
    for doc in docs {
        let mut score = 0.0;
        for q in query {
            let tf = doc.tokens.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|d| d.tokens.iter().any(|t| t == q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let len_norm = 1.0 - b + b * doc.tokens.len() as f64 / avg;
            score += idf * tf * (k1 + 1.0) / (tf + k1 * len_norm);
        }
        if score > 0.0 {
            scored.push((doc.id.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[test]
fn criterion_01_bm25_matches_brute_force() {
    const N: usize = 1;
    const NAME: &str = "bm25 vs brute force";
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let vocab: Vec<String> = (0..30).map(|i| format!("t{i:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC0_0001);

    let mut checked = 0usize;
    for case in 0..50 {
        let doc_count = rng.random_range(1..=200);
        let docs: Vec<RawDoc> = (0..doc_count)
            .map(|i| {
                let len = rng.random_range(1..=30);
                let tokens: Vec<String> =
                    (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect();
                RawDoc { id: format!("d{i:03}"), tokens }
            })
            .collect();

        let path = dir.path().join(format!("c{case}.jsonl"));
        let lines: Vec<String> = docs
            .iter()
            .map(|d| {
                serde_json::json!({
                    "id": d.id,
                    "abstract": d.tokens.join(" "),
                    "citations": [],
                })
                .to_string()
            })
            .collect();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        let corpus = ingest_corpus(&path).unwrap().corpus;
        let index = build_index(&corpus, 1.2, 0.75).unwrap();

        for _ in 0..4 {
            let mut query: Vec<String> = (0..rng.random_range(1..=3))
                .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                .collect();
            if rng.random_range(0..3) == 0 {
                let dup = query[0].clone();
                query.push(dup); // duplicate token adds a second occurrence
            }
            if rng.random_range(0..4) == 0 {
                query.push("zzz".to_string()); // unseen token contributes nothing
            }
            let phrase = query.join(" ");
            for k in [1usize, 3, 5, 10, 50] {
                let want = brute_force_topk(&docs, &query, k);
                let got = index.retrieve_topk_scored(&phrase, k);
                let got_ids: Vec<&str> = got.iter().map(|(id, _)| id.as_str()).collect();
                let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
                ensure!(got_ids == want_ids, N, NAME, "ranking mismatch for {phrase:?} k={k}");
                for ((_, gs), (_, ws)) in got.iter().zip(&want) {
                    ensure!((gs - ws).abs() <= 1e-9, N, NAME, "score {gs} vs {ws} for {phrase:?}");
                }
                checked += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, N, NAME, "took {secs:.1}s, budget 30s");
    pass(N, NAME, format!("50 corpora, {checked} top-k comparisons, {secs:.1}s"));
}

// ---------------------------------------------------------------------------
// Criterion 2: RAKE worked example plus randomized sentences vs a hand oracle.
// ---------------------------------------------------------------------------

/// Candidate runs by hand: lowercase, fragments end at punctuation, runs
/// split at stopwords, over-long runs dropped.
fn rake_oracle_candidates(text: &str, stopwords: &HashSet<String>) -> Vec<Vec<String>> {
    let mut fragments: Vec<Vec<String>> = vec![Vec::new()];
    let mut token = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            token.push(ch);
        } else {
            if !token.is_empty() {
                fragments.last_mut().unwrap().push(std::mem::take(&mut token));
            }
            if !ch.is_whitespace() {
                fragments.push(Vec::new());
            }
        }
    }
    if !token.is_empty() {
        fragments.last_mut().unwrap().push(token);
    }
    let mut runs = Vec::new();
    for fragment in fragments {
        let mut run = Vec::new();
        for tok in fragment {
            if stopwords.contains(&tok) {
                if !run.is_empty() && run.len() <= MAX_CANDIDATE_TOKENS {
                    runs.push(std::mem::take(&mut run));
                } else {
                    run.clear();
                }
            } else {
                run.push(tok);
            }
        }
        if !run.is_empty() && run.len() <= MAX_CANDIDATE_TOKENS {
            runs.push(run);
        }
    }
    runs
}

/// Degree/frequency word scores, phrase score as their sum, first-occurrence
/// dedup, ties by earlier occurrence then text.
fn rake_oracle(text: &str, stopwords: &HashSet<String>, top_m: usize) -> Vec<(String, f64)> {
    let runs = rake_oracle_candidates(text, stopwords);
    let word_score = |word: &str| -> f64 {
        let (mut freq, mut degree) = (0u64, 0u64);
        for run in &runs {
            for tok in run {
                if tok == word {
                    freq += 1;
                    degree += run.len() as u64;
                }
            }
        }
        degree as f64 / freq as f64
    };
    let mut seen: Vec<(String, f64)> = Vec::new();
    for run in &runs {
        let text = run.join(" ");
        if seen.iter().any(|(t, _)| *t == text) {
            continue;
        }
        let score = run.iter().map(|t| word_score(t)).sum();
        seen.push((text, score));
    }
    let mut order: Vec<usize> = (0..seen.len()).collect();
    order.sort_by(|&a, &b| seen[b].1.total_cmp(&seen[a].1).then(a.cmp(&b)));
    order.into_iter().take(top_m).map(|i| seen[i].clone()).collect()
}

#[test]
fn criterion_02_rake_matches_hand_rules() {
    const N: usize = 2;
    const NAME: &str = "rake vs hand rules";

    // Documented worked example.
    let on: HashSet<String> = ["on".to_string()].into_iter().collect();
    let got = rake_extract("d", "red apples grow on tall trees", &on, 3);
    ensure!(got.len() == 2, N, NAME, "worked example count {}", got.len());
    ensure!(
        got[0].text == "red apples grow" && got[0].rake_score == 9.0,
        N,
        NAME,
        "first candidate {:?} score {}",
        got[0].text,
        got[0].rake_score
    );
    ensure!(
        got[1].text == "tall trees" && got[1].rake_score == 4.0,
        N,
        NAME,
        "second candidate {:?} score {}",
        got[1].text,
        got[1].rake_score
    );

    let stopwords = default_stopwords();
    let content = [
        "solar", "panel", "battery", "acid", "laser", "optical", "fiber", "signal", "motor",
        "drive", "sensor", "array", "quantum", "dot", "x9", "42",
    ];
    let stops = ["the", "of", "and", "on", "with", "for"];
    let punct = [",", ".", ";", "-"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC0_0002);
    for round in 0..20 {
        let mut sentence = String::new();
        if round == 0 {
            // One run over the length cap so the drop rule is exercised.
            sentence.push_str("solar panel battery acid laser fiber signal motor");
        }
        for _ in 0..rng.random_range(5..=18) {
            if !sentence.is_empty() {
                sentence.push(' ');
            }
            if rng.random_range(0..100) < 38 {
                sentence.push_str(stops[rng.random_range(0..stops.len())]);
            } else {
                sentence.push_str(content[rng.random_range(0..content.len())]);
            }
            if rng.random_range(0..100) < 15 {
                sentence.push_str(punct[rng.random_range(0..punct.len())]);
            }
        }
        let top_m = rng.random_range(1..=4);
        let want = rake_oracle(&sentence, stopwords, top_m);
        let got = rake_extract("d", &sentence, stopwords, top_m);
        let got_texts: Vec<&str> = got.iter().map(|c| c.text.as_str()).collect();
        let want_texts: Vec<&str> = want.iter().map(|(t, _)| t.as_str()).collect();
        ensure!(got_texts == want_texts, N, NAME, "order for {sentence:?}: {got_texts:?} vs {want_texts:?}");
        for (cand, (_, score)) in got.iter().zip(&want) {
            ensure!(
                (cand.rake_score - score).abs() <= 1e-12,
                N,
                NAME,
                "score for {:?}: {} vs {score}",
                cand.text,
                cand.rake_score
            );
        }
    }
    pass(N, NAME, "worked example exact, 20 randomized sentences matched");
}

// ---------------------------------------------------------------------------
// Small pipeline state shared by the gradient check and the invariant suite.
// ---------------------------------------------------------------------------

fn mini_state() -> PipelineState {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mini.jsonl");
    common::write_fixture_corpus(&path);
    let corpus = ingest_corpus(&path).unwrap().corpus;
    let phrases = build_phrase_set(&corpus, default_stopwords(), 3, 2, false);
    let index = build_index(&corpus, 1.2, 0.75).unwrap();
    let universe = build_universe(&corpus, &phrases, &index, 3).unwrap();
    PipelineState { corpus, phrases, index, universe }
}

static MINI: LazyLock<PipelineState> = LazyLock::new(mini_state);

// ---------------------------------------------------------------------------
// Criterion 3: analytic gradients vs central finite differences.
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_BUCKETS: usize = 48;
// Asymmetric weights and margins so a relation mix-up cannot cancel out.
const FD_ALPHA: f64 = 0.6;
const FD_MARGIN_R: f64 = 0.15;
const FD_MARGIN_C: f64 = 0.08;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn analytic_grads(
    state: &PipelineState,
    batch: &TripletBatch,
    enc: &Encoder,
    gnn: &GnnParams,
) -> (f64, Grads) {
    let fwd =
        batch_forward(state, batch, enc, gnn, FD_ALPHA, FD_MARGIN_R, FD_MARGIN_C).expect("forward");
    let mut grads = Grads::zeros(gnn.dim(), gnn.layer_count());
    for (i, ego) in batch.egos.iter().enumerate() {
        if fwd.upstreams[i].is_empty() {
            continue;
        }
        grads.merge(backward(ego, gnn, &fwd.states[i], &fwd.upstreams[i]).expect("backward"));
    }
    (fwd.eval.total, grads)
}

/// First sampling seed whose ego graphs stay small and produce both triplet
/// kinds; deterministic for the fixed fixture.
fn pick_small_batch(state: &PipelineState, sample: SampleParams) -> TripletBatch {
    for seed in 0..2000 {
        let batch = build_batch(state, &[0u32, 1], sample, seed).expect("batch");
        let small = batch.egos.iter().all(|e| e.node_count() <= 8);
        if small && !batch.retrieval.is_empty() && !batch.citation.is_empty() {
            return batch;
        }
    }
    panic!("no batch with small ego graphs and both triplet kinds");
}

/// Max relative error over every attention matrix entry and every encoder
/// table entry, each probed with a central difference.
fn max_fd_error(
    enc: &mut Encoder,
    gnn: &mut GnnParams,
    grads: &Grads,
    loss: &dyn Fn(&Encoder, &GnnParams) -> f64,
) -> f64 {
    let dim = gnn.dim();
    let mut worst = 0.0f64;
    for layer in 0..gnn.layer_count() {
        for head in 0..3 {
            for mat in 0..4 {
                for idx in 0..dim * dim {
                    gnn.layers[layer].heads_mut()[head].matrices_mut()[mat][idx] += FD_STEP;
                    let plus = loss(enc, gnn);
                    gnn.layers[layer].heads_mut()[head].matrices_mut()[mat][idx] -= 2.0 * FD_STEP;
                    let minus = loss(enc, gnn);
                    gnn.layers[layer].heads_mut()[head].matrices_mut()[mat][idx] += FD_STEP;
                    let numeric = (plus - minus) / (2.0 * FD_STEP);
                    let analytic = grads.gnn.layers[layer].heads()[head].matrices()[mat][idx];
                    worst = worst.max(rel_err(analytic, numeric));
                }
            }
        }
    }
    for flat in 0..FD_BUCKETS * dim {
        enc.hash_table_mut().expect("trainable").rows_mut()[flat] += FD_STEP;
        let plus = loss(enc, gnn);
        enc.hash_table_mut().expect("trainable").rows_mut()[flat] -= 2.0 * FD_STEP;
        let minus = loss(enc, gnn);
        enc.hash_table_mut().expect("trainable").rows_mut()[flat] += FD_STEP;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let bucket = (flat / dim) as u32;
        let analytic = grads.encoder.get(&bucket).map(|row| row[flat % dim]).unwrap_or(0.0);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    const N: usize = 3;
    const NAME: &str = "gradient check";
    let started = Instant::now();
    let state = &*MINI;
    let samples = [
        SampleParams { iterations: 2, fanout_r: 2, fanout_c: 1 },
        SampleParams { iterations: 2, fanout_r: 1, fanout_c: 2 },
    ];

    let mut worst_overall = 0.0f64;
    for dim in [3usize, 5] {
        for layer_count in [1usize, 2, 3] {
            for (si, sample) in samples.iter().enumerate() {
                let batch = pick_small_batch(state, *sample);
                let mut enc = init_encoder(dim, FD_BUCKETS, 97 + si as u64);
                let mut gnn = GnnParams::init(dim, layer_count, 1300 + si as u64);

                let (loss_now, grads) = analytic_grads(state, &batch, &enc, &gnn);
                ensure!(loss_now > 0.0, N, NAME, "inactive hinges make the check vacuous");

                let batch_ref = &batch;
                let worst = max_fd_error(&mut enc, &mut gnn, &grads, &|e, g| {
                    total_loss(state, batch_ref, e, g, FD_ALPHA, FD_MARGIN_R, FD_MARGIN_C)
                        .expect("loss")
                });
                ensure!(
                    worst < FD_TOL,
                    N,
                    NAME,
                    "d={dim} L={layer_count} sample#{si}: max rel err {worst:.3e}"
                );
                worst_overall = worst_overall.max(worst);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 120.0, N, NAME, "took {secs:.1}s, budget 120s");
    pass(N, NAME, format!("max rel err {worst_overall:.3e} over d in 3,5 and L in 1..3, {secs:.1}s"));
}

// ---------------------------------------------------------------------------
// Criterion 4: loss formulas and correlations match direct arithmetic.
// ---------------------------------------------------------------------------

fn counting_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|x| *x < v).count() as f64;
            let equal = values.iter().filter(|x| *x == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|a| a * a).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn criterion_04_formulas_match_direct_arithmetic() {
    const N: usize = 4;
    const NAME: &str = "loss and correlation formulas";
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC0_0004);

    let rand_vec = |rng: &mut ChaCha8Rng, d: usize| -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    for round in 0..1000 {
        let d = rng.random_range(1..=8);
        let (a, p, n) = (rand_vec(&mut rng, d), rand_vec(&mut rng, d), rand_vec(&mut rng, d));
        let margin = rng.random_range(0.0..0.6);

        let want_dis =
            a.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        ensure!((dis(&a, &p).unwrap() - want_dis).abs() <= 1e-12, N, NAME, "distance, round {round}");

        let want_hinge = (dis(&a, &p).unwrap() - dis(&a, &n).unwrap() + margin).max(0.0);
        for (label, got) in [
            ("triplet", triplet_loss(&a, &p, &n, margin).unwrap()),
            ("retrieval", retrieval_loss(&a, &p, &n, margin).unwrap()),
            ("citation", citation_loss(&a, &p, &n, margin).unwrap()),
        ] {
            ensure!((got - want_hinge).abs() <= 1e-12, N, NAME, "{label} hinge, round {round}");
        }

        let y = rng.random_range(0.0..1.0);
        let (phi1, phi2) = if round % 97 == 0 {
            (vec![0.0; d], rand_vec(&mut rng, d)) // zero vector: cosine falls back to 0
        } else {
            (rand_vec(&mut rng, d), rand_vec(&mut rng, d))
        };
        let cos = if norm(&phi1) == 0.0 || norm(&phi2) == 0.0 {
            0.0
        } else {
            phi1.iter().zip(&phi2).map(|(x, y)| x * y).sum::<f64>() / (norm(&phi1) * norm(&phi2))
        };
        let want_sup = (cos - y) * (cos - y);
        ensure!(
            (supervised_loss(&phi1, &phi2, y).unwrap() - want_sup).abs() <= 1e-12,
            N,
            NAME,
            "supervised loss, round {round}"
        );
    }

    // Batch objective equals the enumerated weighted sum of its hinges.
    let state = &*MINI;
    let sample = SampleParams { iterations: 2, fanout_r: 2, fanout_c: 1 };
    for round in 0..20 {
        let batch = build_batch(state, &[0u32, 1, 2, 3], sample, round).unwrap();
        let enc = init_encoder(4, 64, round);
        let gnn = GnnParams::init(4, 2, round + 7);
        let alpha = [0.0, 0.25, 0.5, 1.0][round as usize % 4];
        let (mr, mc) = (0.12, 0.07);
        let fwd = batch_forward(state, &batch, &enc, &gnn, alpha, mr, mc).unwrap();
        let mut want = 0.0;
        for (triplets, margin, weight) in
            [(&batch.retrieval, mr, alpha), (&batch.citation, mc, 1.0 - alpha)]
        {
            for t in triplets {
                want += weight
                    * triplet_loss(
                        fwd.states[t.graph].h_last(t.anchor),
                        fwd.states[t.graph].h_last(t.positive),
                        fwd.states[t.neg_graph].h_last(t.negative),
                        margin,
                    )
                    .unwrap();
            }
        }
        let got = total_loss(state, &batch, &enc, &gnn, alpha, mr, mc).unwrap();
        ensure!((got - want).abs() <= 1e-12, N, NAME, "batch objective, round {round}");
    }

    // Correlations against counting ranks and the direct product-moment form.
    let mut tied_rounds = 0usize;
    for round in 0..300 {
        let n_pts = rng.random_range(2..=60);
        let make = |rng: &mut ChaCha8Rng, grid: bool| -> Vec<f64> {
            loop {
                let v: Vec<f64> = (0..n_pts)
                    .map(|_| {
                        if grid {
                            rng.random_range(0..5) as f64
                        } else {
                            rng.random_range(-10.0..10.0)
                        }
                    })
                    .collect();
                if v.iter().any(|x| *x != v[0]) {
                    return v;
                }
            }
        };
        let grid = round % 2 == 0 && n_pts >= 3;
        let x = make(&mut rng, grid);
        let y = make(&mut rng, grid);
        let has_ties = |v: &[f64]| {
            let mut bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            bits.sort_unstable();
            bits.windows(2).any(|w| w[0] == w[1])
        };
        if has_ties(&x) || has_ties(&y) {
            tied_rounds += 1;
        }
        let want_p = direct_pearson(&x, &y);
        ensure!(
            (pearson(&x, &y).unwrap() - want_p).abs() <= 1e-9,
            N,
            NAME,
            "pearson, round {round}"
        );
        let want_s = direct_pearson(&counting_ranks(&x), &counting_ranks(&y));
        ensure!(
            (spearman(&x, &y).unwrap() - want_s).abs() <= 1e-9,
            N,
            NAME,
            "spearman, round {round}"
        );
    }
    ensure!(tied_rounds >= 50, N, NAME, "only {tied_rounds} tied-rank rounds");
    pass(
        N,
        NAME,
        format!("1000 loss inputs, 20 batch objectives, 300 correlation rounds ({tied_rounds} with ties)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: structural invariants.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_invariant_suite() {
    const N: usize = 5;
    const NAME: &str = "invariant suite";
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC0_0005);
    let state = &*MINI;

    // Attention weights sum to one and are non-negative.
    for round in 0..50 {
        let d = rng.random_range(2..=6);
        let gnn = GnnParams::init(d, 1, round);
        let head = &gnn.layers[0].heads()[0];
        let target: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = (0..rng.random_range(1..=6))
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let alphas = gat_attention(head, &target, &refs).unwrap();
        let sum: f64 = alphas.iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-9, N, NAME, "attention sum {sum}");
        ensure!(alphas.iter().all(|a| *a >= 0.0), N, NAME, "negative attention weight");
    }

    // Cosine similarity is invariant under positive rescaling.
    for _ in 0..100 {
        let d = rng.random_range(1..=6);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (la, lb) = (rng.random_range(0.01..50.0), rng.random_range(0.01..50.0));
        let sa: Vec<f64> = a.iter().map(|x| x * la).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * lb).collect();
        let base = infer_similarity(&a, &b).unwrap();
        let scaled = infer_similarity(&sa, &sb).unwrap();
        ensure!((base - scaled).abs() <= 1e-12, N, NAME, "cosine scale drift {base} vs {scaled}");
    }

    // Rank correlation survives strictly monotone transforms.
    for _ in 0..50 {
        let n_pts = rng.random_range(3..=40);
        let x: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-5.0..5.0)).collect();
        if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
            continue;
        }
        let base = spearman(&x, &y).unwrap();
        for transform in [
            |v: f64| 3.0 * v + 7.0,
            |v: f64| v * v * v,
            |v: f64| (v / 10.0).exp(),
        ] {
            let tx: Vec<f64> = x.iter().map(|v| transform(*v)).collect();
            let got = spearman(&tx, &y).unwrap();
            ensure!((base - got).abs() <= 1e-12, N, NAME, "monotone transform moved spearman");
        }
    }

    // Combined readout is the elementwise sum of first and last states,
    // verified on sampled ego graphs.
    let sample = SampleParams { iterations: 2, fanout_r: 2, fanout_c: 2 };
    let enc = init_encoder(6, 64, 11);
    let gnn = GnnParams::init(6, 2, 12);
    for seed in 0..10u64 {
        let ego = sample_ego(&state.universe, state.universe.phrase_text(0), sample, seed).unwrap();
        let states = forward_ego(state, &ego, &enc, &gnn).unwrap();
        let phi = states.phi(&ego);
        for (i, v) in phi.iter().enumerate() {
            let want = states.h0(ego.focal())[i] + states.h_last(ego.focal())[i];
            ensure!((v - want).abs() <= 1e-15, N, NAME, "readout identity drifted");
        }
        for s in states.attention_sums() {
            ensure!((s - 1.0).abs() <= 1e-9, N, NAME, "forward attention sum {s}");
        }
    }

    // Singleton ego: readout is exactly twice the text encoding.
    let lonely = SampleParams { iterations: 2, fanout_r: 0, fanout_c: 0 };
    let ego = sample_ego(&state.universe, state.universe.phrase_text(1), lonely, 5).unwrap();
    ensure!(ego.is_singleton(), N, NAME, "zero-fanout ego grew neighbors");
    let states = forward_ego(state, &ego, &enc, &gnn).unwrap();
    let phi = states.phi(&ego);
    let text = state.universe.phrase_text(1);
    let f = enc.embed(text, text).unwrap();
    for (v, e) in phi.iter().zip(&f) {
        ensure!((v - 2.0 * e).abs() <= 1e-15, N, NAME, "singleton readout is not 2 f(u)");
    }

    // Empty neighbor list: aggregation returns the target unchanged.
    let head = &gnn.layers[0].heads()[0];
    let target: Vec<f64> = (0..6).map(|i| i as f64 / 3.0 - 0.8).collect();
    let out = gat_aggregate(head, &target, &[]).unwrap();
    ensure!(out == target, N, NAME, "empty-neighbor aggregation changed the target");

    pass(N, NAME, "attention, cosine, rank, readout, and fallback identities hold");
}

// ---------------------------------------------------------------------------
// Synthetic clustered fixture shared by criteria 6, 7, 8, and 10.
// ---------------------------------------------------------------------------

const CLUSTERS: usize = 8;
const DOCS_PER_CLUSTER: usize = 50;
const PHRASES_PER_CLUSTER: usize = 25;
const SEEDS: [u64; 5] = [3, 17, 29, 41, 53];

fn cluster_phrase(c: usize, p: usize) -> String {
    format!("tag{c}x core{c}{p:02}a unit{c}{p:02}b part{c}{p:02}c gear{c}{p:02}d")
}

fn cluster_doc_id(c: usize, k: usize) -> String {
    format!("c{c}d{k:02}")
}

/// 400 docs in 8 clusters; doc k of a cluster hosts phrases 3k, 3k+1, 3k+2
/// (mod 25), so every phrase appears in exactly 6 documents. Citations stay
/// inside the cluster except for 89 evenly spread cross edges (10% of all
/// citation edges). Junk tails are unique per document.
fn synthetic_corpus_lines() -> Vec<String> {
    let cross_docs: HashSet<usize> = (0..89).map(|j| j * 400 / 89).collect();
    let mut lines = Vec::new();
    for c in 0..CLUSTERS {
        for k in 0..DOCS_PER_CLUSTER {
            let g = c * DOCS_PER_CLUSTER + k;
            let ps = [3 * k % 25, (3 * k + 1) % 25, (3 * k + 2) % 25];
            let text = format!(
                "the {} with the {} and the {} for q{g:03}a q{g:03}b q{g:03}c q{g:03}d \
                 of r{g:03}e r{g:03}f r{g:03}g r{g:03}h",
                cluster_phrase(c, ps[0]),
                cluster_phrase(c, ps[1]),
                cluster_phrase(c, ps[2]),
            );
            let mut citations = vec![
                cluster_doc_id(c, (k + 1) % DOCS_PER_CLUSTER),
                cluster_doc_id(c, (k + 3) % DOCS_PER_CLUSTER),
            ];
            if cross_docs.contains(&g) {
                citations.push(cluster_doc_id((c + 1) % CLUSTERS, k));
            }
            lines.push(
                serde_json::json!({
                    "id": cluster_doc_id(c, k),
                    "abstract": text,
                    "citations": citations,
                })
                .to_string(),
            );
        }
    }
    lines
}

fn random_pair(
    rng: &mut ChaCha8Rng,
    same_cluster: bool,
    used: &mut HashSet<(usize, usize, usize, usize)>,
) -> PhrasePair {
    loop {
        let c = rng.random_range(0..CLUSTERS);
        let d = if same_cluster {
            c
        } else {
            (c + rng.random_range(1..CLUSTERS)) % CLUSTERS
        };
        let p = rng.random_range(0..PHRASES_PER_CLUSTER);
        let q = rng.random_range(0..PHRASES_PER_CLUSTER);
        if c == d && p == q {
            continue;
        }
        let key = if (c, p) <= (d, q) { (c, p, d, q) } else { (d, q, c, p) };
        if !used.insert(key) {
            continue;
        }
        let score = if same_cluster { 1.0 } else { 0.0 };
        return PhrasePair::new(cluster_phrase(c, p), cluster_phrase(d, q), score);
    }
}

fn synthetic_pairs(rng: &mut ChaCha8Rng, half: usize, used: &mut HashSet<(usize, usize, usize, usize)>) -> Vec<PhrasePair> {
    let mut pairs = Vec::with_capacity(2 * half);
    for i in 0..2 * half {
        pairs.push(random_pair(rng, i % 2 == 0, used));
    }
    pairs
}

struct SyntheticFixture {
    state: PipelineState,
    train_pairs: Vec<PhrasePair>,
    val_pairs: Vec<PhrasePair>,
    test_pairs: Vec<PhrasePair>,
}

fn build_synthetic_state(k: usize) -> PipelineState {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.jsonl");
    fs::write(&path, synthetic_corpus_lines().join("\n") + "\n").unwrap();
    let corpus = ingest_corpus(&path).unwrap().corpus;
    let phrases = build_phrase_set(&corpus, default_stopwords(), 3, 2, false);
    let index = build_index(&corpus, 1.2, 0.75).unwrap();
    let universe = build_universe(&corpus, &phrases, &index, k).unwrap();
    PipelineState { corpus, phrases, index, universe }
}

static FIXTURE: LazyLock<SyntheticFixture> = LazyLock::new(|| {
    let state = build_synthetic_state(5);
    assert_eq!(state.universe.phrase_count(), (CLUSTERS * PHRASES_PER_CLUSTER) as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1C5);
    let mut used = HashSet::new();
    let test_pairs = synthetic_pairs(&mut rng, 80, &mut used);
    let val_pairs = synthetic_pairs(&mut rng, 100, &mut used);
    let train_pairs = synthetic_pairs(&mut rng, 120, &mut used);
    SyntheticFixture { state, train_pairs, val_pairs, test_pairs }
});

fn synthetic_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 32,
        bucket_count: 4096,
        layers: 2,
        learning_rate: 1e-3,
        batch_size: 8,
        max_epochs: 2,
        alpha: 0.5,
        margin_r: 0.05,
        margin_c: 0.05,
        k: 5,
        iterations: 2,
        fanout_r: 5,
        fanout_c: 5,
        eval_every: 25,
        seed,
        total_epoch_budget: 5,
    }
}

struct SeedRun {
    seed: u64,
    trained_sp: f64,
    baseline_sp: f64,
    graphonly_sp: f64,
    supervised_sp: f64,
    retrieve_w: f64,
    trained_report: EvalReport,
    untrained_report: EvalReport,
}

struct Runs {
    directional_secs: f64,
    per_seed: Vec<SeedRun>,
}

/// Spearman of raw-text-encoding cosines against the labels: the frozen
/// encoder-only reference point.
fn encoder_only_spearman(encoder: &Encoder, pairs: &[PhrasePair]) -> f64 {
    let preds: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let a = encoder.embed(&p.phrase1, &p.phrase1).unwrap();
            let b = encoder.embed(&p.phrase2, &p.phrase2).unwrap();
            infer_similarity(&a, &b).unwrap()
        })
        .collect();
    let labels: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    spearman(&preds, &labels).unwrap()
}

static RUNS: LazyLock<Runs> = LazyLock::new(|| {
    let fx = &*FIXTURE;
    let started = Instant::now();

    // Directional runs first: self-supervised training per seed, evaluated
    // against the frozen encoder-only reference.
    let mut partial: Vec<(u64, f64, f64, EvalReport)> = Vec::new();
    for seed in SEEDS {
        let cfg = synthetic_train_config(seed);
        let model = Model::new(
            init_encoder(cfg.dim, cfg.bucket_count, seed),
            GnnParams::init(cfg.dim, cfg.layers, seed),
        )
        .unwrap();
        let outcome = train(&fx.state, model, &cfg, Some(&fx.val_pairs)).unwrap();
        let trained = evaluate(
            &fx.state,
            &outcome.best.model,
            &fx.test_pairs,
            cfg.k,
            cfg.sample_params(),
            seed,
        )
        .unwrap();
        let frozen = init_encoder(cfg.dim, cfg.bucket_count, seed);
        let baseline_sp = encoder_only_spearman(&frozen, &fx.test_pairs);
        eprintln!(
            "[synthetic] seed {seed}: trained spearman {:.4}, encoder-only {:.4}",
            trained.spearman, baseline_sp
        );
        partial.push((seed, trained.spearman, baseline_sp, trained));
    }
    let directional_secs = started.elapsed().as_secs_f64();

    // Remaining measurements reuse the fixture per seed.
    let mut per_seed = Vec::new();
    for (seed, trained_sp, baseline_sp, trained_report) in partial {
        let cfg = synthetic_train_config(seed);
        let frozen = init_encoder(cfg.dim, cfg.bucket_count, seed);

        let untrained = Model::new(frozen.clone(), GnnParams::init(cfg.dim, cfg.layers, seed)).unwrap();
        let untrained_report =
            evaluate(&fx.state, &untrained, &fx.test_pairs, cfg.k, cfg.sample_params(), seed)
                .unwrap();

        let graph_outcome = graph_only_baseline(&fx.state, &cfg, Some(&fx.val_pairs)).unwrap();
        let graphonly = evaluate(
            &fx.state,
            &graph_outcome.best.model,
            &fx.test_pairs,
            cfg.k,
            cfg.sample_params(),
            seed,
        )
        .unwrap();

        let supervised_model = Model::new(
            init_encoder(cfg.dim, cfg.bucket_count, seed),
            GnnParams::init(cfg.dim, cfg.layers, seed),
        )
        .unwrap();
        let supervised_outcome =
            train_supervised(&fx.state, supervised_model, &cfg, &fx.train_pairs, Some(&fx.val_pairs))
                .unwrap();
        let supervised = evaluate(
            &fx.state,
            &supervised_outcome.best.model,
            &fx.test_pairs,
            cfg.k,
            cfg.sample_params(),
            seed,
        )
        .unwrap();

        let (retrieve_w, _) = fit_retrieve_avg_weight(&fx.state, &frozen, &fx.val_pairs).unwrap();
        eprintln!(
            "[synthetic] seed {seed}: graph-only {:.4}, supervised {:.4}, retrieve-avg w {retrieve_w:.1}, \
             alignment {:.4} -> {:.4}, uniformity {:.4} -> {:.4}",
            graphonly.spearman,
            supervised.spearman,
            untrained_report.alignment_loss,
            trained_report.alignment_loss,
            untrained_report.uniformity_loss,
            trained_report.uniformity_loss,
        );

        per_seed.push(SeedRun {
            seed,
            trained_sp,
            baseline_sp,
            graphonly_sp: graphonly.spearman,
            supervised_sp: supervised.spearman,
            retrieve_w,
            trained_report,
            untrained_report,
        });
    }
    Runs { directional_secs, per_seed }
});

// ---------------------------------------------------------------------------
// Criterion 6: trained model beats the frozen encoder-only reference.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_trained_model_beats_encoder_only() {
    const N: usize = 6;
    const NAME: &str = "directional end to end";
    let runs = &*RUNS;
    let wins = runs
        .per_seed
        .iter()
        .filter(|r| r.trained_sp >= r.baseline_sp + 0.05)
        .count();
    let detail: Vec<String> = runs
        .per_seed
        .iter()
        .map(|r| format!("seed {}: {:.3} vs {:.3}", r.seed, r.trained_sp, r.baseline_sp))
        .collect();
    ensure!(wins >= 4, N, NAME, "only {wins}/5 seeds improved by 0.05: {}", detail.join(", "));
    ensure!(
        runs.directional_secs < 600.0,
        N,
        NAME,
        "took {:.0}s, budget 600s",
        runs.directional_secs
    );
    pass(
        N,
        NAME,
        format!("{wins}/5 seeds ahead by >= 0.05 ({}), {:.0}s", detail.join(", "), runs.directional_secs),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: baseline ordering.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_baseline_ordering() {
    const N: usize = 7;
    const NAME: &str = "baseline ordering";
    let runs = &*RUNS;
    for r in &runs.per_seed {
        ensure!(
            r.graphonly_sp < r.trained_sp,
            N,
            NAME,
            "seed {}: graph-only {:.3} not below full {:.3}",
            r.seed,
            r.graphonly_sp,
            r.trained_sp
        );
    }
    let interior = runs.per_seed.iter().filter(|r| r.retrieve_w > 0.0 && r.retrieve_w < 1.0).count();
    let ws: Vec<String> = runs.per_seed.iter().map(|r| format!("{:.1}", r.retrieve_w)).collect();
    ensure!(interior >= 3, N, NAME, "only {interior}/5 interior weights: {}", ws.join(", "));
    pass(
        N,
        NAME,
        format!("graph-only below full model in 5/5 seeds; interior weights {interior}/5 ({})", ws.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: supervised schedule matches or beats self-supervised.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_supervised_matches_or_beats_selfsupervised() {
    const N: usize = 8;
    const NAME: &str = "supervised schedule";
    let runs = &*RUNS;
    let wins = runs.per_seed.iter().filter(|r| r.supervised_sp >= r.trained_sp).count();
    let detail: Vec<String> = runs
        .per_seed
        .iter()
        .map(|r| format!("seed {}: {:.3} vs {:.3}", r.seed, r.supervised_sp, r.trained_sp))
        .collect();
    ensure!(wins >= 3, N, NAME, "only {wins}/5 seeds matched: {}", detail.join(", "));
    pass(N, NAME, format!("{wins}/5 seeds at or above self-supervised ({})", detail.join(", ")));
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical metric reports for identical config and seed.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_pipeline_reports_are_byte_identical() {
    const N: usize = 9;
    const NAME: &str = "deterministic reports";
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("synthetic.jsonl");
    fs::write(&corpus_path, synthetic_corpus_lines().join("\n") + "\n").unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0xF1C6);
    let mut used = HashSet::new();
    let val = synthetic_pairs(&mut rng, 20, &mut used);
    let test = synthetic_pairs(&mut rng, 40, &mut used);
    write_pairs(dir.path().join("val.csv"), &val).unwrap();
    write_pairs(dir.path().join("test.csv"), &test).unwrap();

    let mut reports = Vec::new();
    for out_name in ["out-a", "out-b"] {
        let mut cfg = PipelineConfig::default();
        cfg.corpus = corpus_path.clone();
        cfg.out_dir = dir.path().join(out_name);
        cfg.pairs_val = Some(dir.path().join("val.csv"));
        cfg.pairs_test = Some(dir.path().join("test.csv"));
        cfg.top_m = 3;
        cfg.min_freq = 2;
        cfg.dim = 16;
        cfg.bucket_count = 1024;
        cfg.layers = 1;
        cfg.learning_rate = 2e-4;
        cfg.batch_size = 8;
        cfg.max_epochs = 1;
        cfg.k = 5;
        cfg.iterations = 1;
        cfg.fanout_r = 3;
        cfg.fanout_c = 3;
        cfg.eval_every = 25;
        cfg.seed = 77;
        let outcomes = run_pipeline(&cfg).unwrap();
        ensure!(outcomes.iter().all(|o| o.ran), N, NAME, "a stage skipped on a fresh out dir");
        reports.push(fs::read(artifacts(&cfg.out_dir).report).unwrap());
    }
    ensure!(!reports[0].is_empty(), N, NAME, "empty report");
    ensure!(reports[0] == reports[1], N, NAME, "reports differ between identical runs");
    pass(N, NAME, format!("two full runs, {} byte reports identical", reports[0].len()));
}

// ---------------------------------------------------------------------------
// Criterion 10: training lowers alignment loss while roughly preserving
// uniformity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_alignment_improves_uniformity_holds() {
    const N: usize = 10;
    const NAME: &str = "alignment and uniformity";
    let runs = &*RUNS;
    for r in &runs.per_seed {
        let (at, au) = (r.trained_report.alignment_loss, r.untrained_report.alignment_loss);
        ensure!(
            at < au,
            N,
            NAME,
            "seed {}: trained alignment {:.4} not below untrained {:.4}",
            r.seed,
            at,
            au
        );
        let (ut, uu) = (r.trained_report.uniformity_loss, r.untrained_report.uniformity_loss);
        let rel = (ut - uu).abs() / uu.abs();
        ensure!(
            rel < 0.5,
            N,
            NAME,
            "seed {}: uniformity moved {:.0}% ({:.4} -> {:.4})",
            r.seed,
            rel * 100.0,
            uu,
            ut
        );
    }
    let detail: Vec<String> = runs
        .per_seed
        .iter()
        .map(|r| {
            format!(
                "seed {}: align {:.3}->{:.3}, uniform {:.3}->{:.3}",
                r.seed,
                r.untrained_report.alignment_loss,
                r.trained_report.alignment_loss,
                r.untrained_report.uniformity_loss,
                r.trained_report.uniformity_loss
            )
        })
        .collect();
    pass(N, NAME, detail.join("; "));
}
