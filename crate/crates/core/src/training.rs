//! Triplet-based self-supervised training over batches of ego graphs,
//! the supervised mean-squared-error objective, and the optimization
//! loop: adaptive moment estimation over encoder + attention parameters,
//! periodic validation, best-checkpoint tracking by validation Spearman.
//!
//! Every random choice (epoch shuffles, ego sampling, negative draws)
//! flows from the config seed through named sub-streams, so a run is a
//! pure function of (data, config).

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::encoder::Encoder;
use crate::eval::{correlations, embed_phrase, PhrasePair};
use crate::gnn::{backward, forward_ego, GnnParams, Grads, NodeStates, Upstream};
use crate::model::{Checkpoint, Model};
use crate::phrasegen::normalize_phrase;
use crate::rng::StreamKey;
use crate::universe::{
    sample_ego, sample_ego_for_text, EgoGraph, EgoNode, PipelineState, SampleParams,
};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Supervised runs: epochs of supervised-only warmup, then joint epochs
/// up to the overall budget.
pub const SUPERVISED_WARMUP_EPOCHS: usize = 2;
pub const DEFAULT_EPOCH_BUDGET: usize = 5;
const NEGATIVE_REDRAWS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub bucket_count: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub alpha: f64,
    pub margin_r: f64,
    pub margin_c: f64,
    pub k: usize,
    pub iterations: usize,
    pub fanout_r: usize,
    pub fanout_c: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Overall epoch cap for supervised runs (warmup + joint).
    pub total_epoch_budget: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: crate::encoder::DEFAULT_DIM,
            bucket_count: crate::encoder::DEFAULT_BUCKET_COUNT,
            layers: crate::gnn::DEFAULT_LAYERS,
            learning_rate: 2e-5,
            batch_size: 4,
            max_epochs: 2,
            alpha: 0.5,
            margin_r: 0.1,
            margin_c: 0.1,
            k: crate::retrieval::DEFAULT_TOP_K,
            iterations: crate::universe::DEFAULT_ITERATIONS,
            fanout_r: crate::universe::DEFAULT_FANOUT,
            fanout_c: crate::universe::DEFAULT_FANOUT,
            eval_every: 100,
            seed: 42,
            total_epoch_budget: DEFAULT_EPOCH_BUDGET,
        }
    }
}

impl TrainConfig {
    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            iterations: self.iterations,
            fanout_r: self.fanout_r,
            fanout_c: self.fanout_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.bucket_count == 0 || self.layers == 0 {
            return Err(Error::Invalid("dim, bucket_count and layers must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("margin_r", self.margin_r),
            ("margin_c", self.margin_c),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::Invalid("eval_every must be >= 1".into()));
        }
        if self.k == 0 || self.iterations == 0 || self.fanout_r == 0 || self.fanout_c == 0 {
            return Err(Error::Invalid("k, iterations and fanouts must be >= 1".into()));
        }
        if self.total_epoch_budget == 0 {
            return Err(Error::Invalid("total_epoch_budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// Euclidean distance.
pub fn dis(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch { expected: x.len(), got: y.len() });
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Hinge on the anchor-positive vs anchor-negative distance gap.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64> {
    Ok((dis(a, p)? - dis(a, n)? + margin).max(0.0))
}

pub fn retrieval_loss(a: &[f64], p: &[f64], n: &[f64], margin_r: f64) -> Result<f64> {
    triplet_loss(a, p, n, margin_r)
}

pub fn citation_loss(a: &[f64], p: &[f64], n: &[f64], margin_c: f64) -> Result<f64> {
    triplet_loss(a, p, n, margin_c)
}

/// Squared error of predicted cosine similarity against the label.
pub fn supervised_loss(phi1: &[f64], phi2: &[f64], y: f64) -> Result<f64> {
    let e = crate::eval::infer_similarity(phi1, phi2)? - y;
    Ok(e * e)
}

/// One triplet, all node references local to their ego graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub graph: usize,
    pub anchor: usize,
    pub positive: usize,
    pub neg_graph: usize,
    pub negative: usize,
}

/// A batch of ego graphs plus the triplets enumerated from their edges.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub egos: Vec<EgoGraph>,
    pub retrieval: Vec<Triplet>,
    pub citation: Vec<Triplet>,
    /// Triplets dropped because no valid in-batch negative was found.
    pub skipped: usize,
}

/// Sample one ego graph per phrase and enumerate triplets: every
/// retrieval edge anchors a patent against its phrase (positive) and a
/// phrase from another batch graph (negative); every citation edge does
/// the same over patents. A negative colliding with any node of the
/// anchor's own graph is redrawn up to 10 times, then the triplet is
/// skipped with a warning.
pub fn build_batch(
    state: &PipelineState,
    phrase_indices: &[u32],
    sample: SampleParams,
    seed: u64,
) -> Result<TripletBatch> {
    if phrase_indices.len() < 2 {
        return Err(Error::BatchTooSmall(phrase_indices.len()));
    }
    let egos: Vec<EgoGraph> = phrase_indices
        .iter()
        .map(|&i| sample_ego(&state.universe, state.universe.phrase_text(i), sample, seed))
        .collect::<Result<_>>()?;

    // Universe identities per graph, for the collision rule.
    let mut phrase_ids: Vec<HashSet<u32>> = Vec::with_capacity(egos.len());
    let mut patent_ids: Vec<HashSet<u32>> = Vec::with_capacity(egos.len());
    for ego in &egos {
        let mut ph = HashSet::new();
        let mut pa = HashSet::new();
        for node in ego.nodes() {
            match node {
                EgoNode::Phrase(i) => {
                    ph.insert(*i);
                }
                EgoNode::Patent(i) => {
                    pa.insert(*i);
                }
                EgoNode::Virtual => {}
            }
        }
        phrase_ids.push(ph);
        patent_ids.push(pa);
    }

    let mut rng = StreamKey::new(seed).with_str("negatives").rng();
    let mut skipped = 0usize;

    let draw = |gi: usize,
                    anchor: usize,
                    positive: usize,
                    pool: &[(usize, usize)],
                    own: &HashSet<u32>,
                    want_phrase: bool,
                    rng: &mut rand_chacha::ChaCha8Rng|
     -> Option<Triplet> {
        if pool.is_empty() {
            return None;
        }
        for _ in 0..NEGATIVE_REDRAWS {
            let (gj, local) = pool[rng.random_range(0..pool.len())];
            let id = match egos[gj].node(local) {
                EgoNode::Phrase(i) if want_phrase => i,
                EgoNode::Patent(i) if !want_phrase => i,
                _ => continue,
            };
            if !own.contains(&id) {
                return Some(Triplet { graph: gi, anchor, positive, neg_graph: gj, negative: local });
            }
        }
        None
    };

    let mut retrieval = Vec::new();
    let mut citation = Vec::new();
    for gi in 0..egos.len() {
        let phrase_pool: Vec<(usize, usize)> = egos
            .iter()
            .enumerate()
            .filter(|&(gj, _)| gj != gi)
            .flat_map(|(gj, ego)| {
                (0..ego.node_count())
                    .filter(move |&l| matches!(ego.node(l), EgoNode::Phrase(_)))
                    .map(move |l| (gj, l))
            })
            .collect();
        let patent_pool: Vec<(usize, usize)> = egos
            .iter()
            .enumerate()
            .filter(|&(gj, _)| gj != gi)
            .flat_map(|(gj, ego)| {
                (0..ego.node_count())
                    .filter(move |&l| matches!(ego.node(l), EgoNode::Patent(_)))
                    .map(move |l| (gj, l))
            })
            .collect();

        for &(p_local, a_local) in egos[gi].retrieval_edges() {
            match draw(gi, a_local, p_local, &phrase_pool, &phrase_ids[gi], true, &mut rng) {
                Some(t) => retrieval.push(t),
                None => {
                    skipped += 1;
                    log::warn!("no in-batch negative phrase for an edge of graph {gi}, skipping");
                }
            }
        }
        for &(a_local, b_local) in egos[gi].citation_edges() {
            match draw(gi, a_local, b_local, &patent_pool, &patent_ids[gi], false, &mut rng) {
                Some(t) => citation.push(t),
                None => {
                    skipped += 1;
                    log::warn!("no in-batch negative patent for an edge of graph {gi}, skipping");
                }
            }
        }
    }

    Ok(TripletBatch { egos, retrieval, citation, skipped })
}

/// Loss pieces of one batch. `total` is alpha-weighted; the sums are raw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchEval {
    pub total: f64,
    pub retrieval_sum: f64,
    pub citation_sum: f64,
    pub active_retrieval: usize,
    pub active_citation: usize,
}

/// Forward pass over a batch: per-graph node states, the loss, and the
/// per-graph upstream gradients ready for the reverse pass.
pub struct BatchForward {
    pub states: Vec<NodeStates>,
    pub eval: BatchEval,
    pub upstreams: Vec<Upstream>,
}

fn triplet_grads(
    states: &[NodeStates],
    upstreams: &mut [Upstream],
    t: &Triplet,
    margin: f64,
    weight: f64,
) -> Result<(f64, bool)> {
    let a = states[t.graph].h_last(t.anchor);
    let p = states[t.graph].h_last(t.positive);
    let n = states[t.neg_graph].h_last(t.negative);
    let d_ap = dis(a, p)?;
    let d_an = dis(a, n)?;
    let loss = (d_ap - d_an + margin).max(0.0);
    let active = loss > 0.0;
    if active && weight != 0.0 {
        let dim = a.len();
        let mut g_a = vec![0.0; dim];
        // d(a,x) differentiates to (a-x)/d; a zero distance contributes a
        // zero subgradient.
        if d_ap > 0.0 {
            let mut g_p = vec![0.0; dim];
            for i in 0..dim {
                let d = weight * (a[i] - p[i]) / d_ap;
                g_a[i] += d;
                g_p[i] = -d;
            }
            upstreams[t.graph].add_final(t.positive, &g_p);
        }
        if d_an > 0.0 {
            let mut g_n = vec![0.0; dim];
            for i in 0..dim {
                let d = weight * (a[i] - n[i]) / d_an;
                g_a[i] -= d;
                g_n[i] = d;
            }
            upstreams[t.neg_graph].add_final(t.negative, &g_n);
        }
        upstreams[t.graph].add_final(t.anchor, &g_a);
    }
    Ok((loss, active))
}

/// Forward every ego graph, score all triplets, and assemble upstream
/// gradients for the active ones.
pub fn batch_forward(
    state: &PipelineState,
    batch: &TripletBatch,
    encoder: &Encoder,
    gnn: &GnnParams,
    alpha: f64,
    margin_r: f64,
    margin_c: f64,
) -> Result<BatchForward> {
    let states: Vec<NodeStates> = batch
        .egos
        .iter()
        .map(|ego| forward_ego(state, ego, encoder, gnn))
        .collect::<Result<_>>()?;
    let mut upstreams: Vec<Upstream> =
        batch.egos.iter().map(|e| Upstream::new(e.node_count())).collect();

    let mut retrieval_sum = 0.0;
    let mut citation_sum = 0.0;
    let mut active_retrieval = 0;
    let mut active_citation = 0;
    for t in &batch.retrieval {
        let (loss, active) = triplet_grads(&states, &mut upstreams, t, margin_r, alpha)?;
        retrieval_sum += loss;
        active_retrieval += usize::from(active);
    }
    for t in &batch.citation {
        let (loss, active) = triplet_grads(&states, &mut upstreams, t, margin_c, 1.0 - alpha)?;
        citation_sum += loss;
        active_citation += usize::from(active);
    }
    let total = alpha * retrieval_sum + (1.0 - alpha) * citation_sum;
    Ok(BatchForward {
        states,
        eval: BatchEval { total, retrieval_sum, citation_sum, active_retrieval, active_citation },
        upstreams,
    })
}

/// The alpha-weighted objective of one batch under given parameters.
pub fn total_loss(
    state: &PipelineState,
    batch: &TripletBatch,
    encoder: &Encoder,
    gnn: &GnnParams,
    alpha: f64,
    margin_r: f64,
    margin_c: f64,
) -> Result<f64> {
    if batch.egos.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    Ok(batch_forward(state, batch, encoder, gnn, alpha, margin_r, margin_c)?.eval.total)
}

/// Adaptive moment estimation over the flat parameter space: the encoder
/// table block (when trainable) followed by the attention matrices.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    encoder_len: usize,
    dim: usize,
}

impl Adam {
    pub fn new(model: &Model, lr: f64) -> Adam {
        let encoder_len = model.encoder.hash_table().map_or(0, |t| t.rows().len());
        let total = encoder_len + model.gnn.param_count();
        Adam {
            lr,
            step: 0,
            m: vec![0.0; total],
            v: vec![0.0; total],
            encoder_len,
            dim: model.dim(),
        }
    }

    fn update_one(&mut self, idx: usize, p: &mut f64, g: f64, bc1: f64, bc2: f64) {
        let m = ADAM_BETA1 * self.m[idx] + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * self.v[idx] + (1.0 - ADAM_BETA2) * g * g;
        self.m[idx] = m;
        self.v[idx] = v;
        *p -= self.lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
    }

    /// One optimizer step. Encoder gradients are sparse by bucket; moments
    /// are dense, but rows never touched so far are skipped — their update
    /// is exactly zero.
    pub fn step(&mut self, model: &mut Model, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);

        if self.encoder_len > 0 {
            let dim = self.dim;
            let table = model.encoder.hash_table_mut().expect("trainable encoder");
            let buckets = table.bucket_count();
            let rows = table.rows_mut();
            for bucket in 0..buckets {
                let g_row = grads.encoder.get(&(bucket as u32));
                let base = bucket * dim;
                if g_row.is_none() && self.v[base..base + dim].iter().all(|&v| v == 0.0) {
                    continue;
                }
                for i in 0..dim {
                    let g = g_row.map_or(0.0, |r| r[i]);
                    self.update_one(base + i, &mut rows[base + i], g, bc1, bc2);
                }
            }
        }

        let mut offset = self.encoder_len;
        for (layer, g_layer) in model.gnn.layers.iter_mut().zip(&grads.gnn.layers) {
            for (head, g_head) in layer.heads_mut().into_iter().zip(g_layer.heads()) {
                for (matrix, g_matrix) in head.matrices_mut().into_iter().zip(g_head.matrices()) {
                    for (j, (p, &g)) in matrix.iter_mut().zip(g_matrix.iter()).enumerate() {
                        self.update_one(offset + j, p, g, bc1, bc2);
                    }
                    offset += self.dim * self.dim;
                }
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub total_loss: f64,
    pub retrieval_sum: f64,
    pub citation_sum: f64,
    pub triplet_count: usize,
    pub supervised_loss: Option<f64>,
    pub val_pearson: Option<f64>,
    pub val_spearman: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest validation Spearman seen (the final state when validation
    /// never produced a metric).
    pub best: Checkpoint,
    /// State after the last step.
    pub last: Checkpoint,
    pub log: Vec<StepLog>,
}

struct Driver<'a> {
    state: &'a PipelineState,
    cfg: &'a TrainConfig,
    val: Option<&'a [PhrasePair]>,
    model: Model,
    adam: Adam,
    log: Vec<StepLog>,
    best: Option<Checkpoint>,
    last_val: (Option<f64>, Option<f64>),
    global_step: u64,
}

impl<'a> Driver<'a> {
    fn new(
        state: &'a PipelineState,
        cfg: &'a TrainConfig,
        model: Model,
        val: Option<&'a [PhrasePair]>,
    ) -> Result<Driver<'a>> {
        cfg.validate()?;
        if model.dim() != cfg.dim {
            return Err(Error::DimMismatch { expected: cfg.dim, got: model.dim() });
        }
        if model.gnn.layer_count() != cfg.layers {
            return Err(Error::Invalid(format!(
                "model has {} layers, config says {}",
                model.gnn.layer_count(),
                cfg.layers
            )));
        }
        let val = match val {
            Some([]) => {
                log::warn!("validation pair list is empty; skipping periodic evaluation");
                None
            }
            other => other,
        };
        let adam = Adam::new(&model, cfg.learning_rate);
        Ok(Driver {
            state,
            cfg,
            val,
            model,
            adam,
            log: Vec::new(),
            best: None,
            last_val: (None, None),
            global_step: 0,
        })
    }

    /// Validation metrics for the current parameters; `None` when the
    /// correlation is undefined (degenerate predictions or labels).
    fn measure_val(&self, pairs: &[PhrasePair]) -> Result<(Option<f64>, Option<f64>)> {
        let seed = StreamKey::new(self.cfg.seed).with_str("val-eval").seed();
        let sample = self.cfg.sample_params();
        let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut predicted = Vec::with_capacity(pairs.len());
        let mut labels = Vec::with_capacity(pairs.len());
        for pair in pairs {
            for text in [pair.phrase1.as_str(), pair.phrase2.as_str()] {
                if !cache.contains_key(text) {
                    let vec =
                        embed_phrase(self.state, &self.model, text, self.cfg.k, sample, seed)?;
                    cache.insert(text, vec);
                }
            }
            predicted.push(crate::eval::infer_similarity(
                &cache[pair.phrase1.as_str()],
                &cache[pair.phrase2.as_str()],
            )?);
            labels.push(pair.score);
        }
        match correlations(&predicted, &labels) {
            Ok((p, s)) => Ok((Some(p), Some(s))),
            Err(Error::ZeroVariance(side)) => {
                log::warn!("validation correlations undefined (zero variance in {side})");
                Ok((None, None))
            }
            Err(e) => Err(e),
        }
    }

    fn run_eval(&mut self, entry: &mut StepLog) -> Result<()> {
        let Some(pairs) = self.val else { return Ok(()) };
        let (p, s) = self.measure_val(pairs)?;
        entry.val_pearson = p;
        entry.val_spearman = s;
        self.last_val = (p, s);
        if let Some(sp) = s {
            let incumbent = self.best.as_ref().and_then(|b| b.val_spearman);
            if incumbent.is_none_or(|b| sp > b) {
                self.best = Some(Checkpoint {
                    model: self.model.clone(),
                    step: self.global_step,
                    val_pearson: p,
                    val_spearman: s,
                });
            }
        }
        Ok(())
    }

    fn finish_step(&mut self, mut entry: StepLog, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(self.global_step));
        }
        if self.global_step % self.cfg.eval_every as u64 == 0 {
            self.run_eval(&mut entry)?;
        }
        self.log.push(entry);
        Ok(())
    }

    fn selfsup_epoch(&mut self, epoch: usize) -> Result<()> {
        let mut order: Vec<u32> = (0..self.state.universe.phrase_count() as u32).collect();
        let mut rng = StreamKey::new(self.cfg.seed)
            .with_str("epoch-shuffle")
            .with_num(epoch as u64)
            .rng();
        order.shuffle(&mut rng);
        let chunks: Vec<&[u32]> = order.chunks(self.cfg.batch_size).collect();
        for (batch_idx, chunk) in chunks.into_iter().enumerate() {
            if chunk.len() < 2 {
                log::warn!("skipping trailing chunk of {} phrase(s)", chunk.len());
                continue;
            }
            self.global_step += 1;
            let batch_seed = StreamKey::new(self.cfg.seed)
                .with_str("batch")
                .with_num(epoch as u64)
                .with_num(batch_idx as u64)
                .seed();
            let batch = build_batch(self.state, chunk, self.cfg.sample_params(), batch_seed)?;
            let fwd = batch_forward(
                self.state,
                &batch,
                &self.model.encoder,
                &self.model.gnn,
                self.cfg.alpha,
                self.cfg.margin_r,
                self.cfg.margin_c,
            )?;
            let mut grads = Grads::zeros(self.cfg.dim, self.cfg.layers);
            for (i, ego) in batch.egos.iter().enumerate() {
                if fwd.upstreams[i].is_empty() {
                    continue;
                }
                grads.merge(backward(ego, &self.model.gnn, &fwd.states[i], &fwd.upstreams[i])?);
            }
            self.adam.step(&mut self.model, &grads);
            let entry = StepLog {
                step: self.global_step,
                epoch,
                total_loss: fwd.eval.total,
                retrieval_sum: fwd.eval.retrieval_sum,
                citation_sum: fwd.eval.citation_sum,
                triplet_count: batch.retrieval.len() + batch.citation.len(),
                supervised_loss: None,
                val_pearson: None,
                val_spearman: None,
            };
            self.finish_step(entry, fwd.eval.total)?;
        }
        Ok(())
    }

    /// One supervised epoch; with `joint` set, every batch also carries a
    /// self-supervised phrase chunk and the two objectives are summed.
    fn supervised_epoch(
        &mut self,
        epoch: usize,
        pairs: &[PhrasePair],
        joint: Option<&mut JointStream>,
    ) -> Result<()> {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = StreamKey::new(self.cfg.seed)
            .with_str("sup-epoch-shuffle")
            .with_num(epoch as u64)
            .rng();
        order.shuffle(&mut rng);
        let mut joint = joint;
        let chunks: Vec<Vec<usize>> =
            order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect();
        for (batch_idx, chunk) in chunks.into_iter().enumerate() {
            self.global_step += 1;
            let ego_seed = StreamKey::new(self.cfg.seed)
                .with_str("sup-batch")
                .with_num(epoch as u64)
                .with_num(batch_idx as u64)
                .seed();
            let (sup_loss, sup_egos, sup_states, mut sup_upstreams) =
                self.supervised_batch(pairs, &chunk, ego_seed)?;

            let mut entry = StepLog {
                step: self.global_step,
                epoch,
                total_loss: sup_loss,
                retrieval_sum: 0.0,
                citation_sum: 0.0,
                triplet_count: 0,
                supervised_loss: Some(sup_loss),
                val_pearson: None,
                val_spearman: None,
            };

            let mut grads = Grads::zeros(self.cfg.dim, self.cfg.layers);
            let mut total = sup_loss;
            if let Some(stream) = joint.as_deref_mut() {
                let phrase_chunk = stream.next_chunk(self.cfg.batch_size);
                let triplet_seed = StreamKey::new(self.cfg.seed)
                    .with_str("joint-batch")
                    .with_num(epoch as u64)
                    .with_num(batch_idx as u64)
                    .seed();
                let batch =
                    build_batch(self.state, &phrase_chunk, self.cfg.sample_params(), triplet_seed)?;
                let fwd = batch_forward(
                    self.state,
                    &batch,
                    &self.model.encoder,
                    &self.model.gnn,
                    self.cfg.alpha,
                    self.cfg.margin_r,
                    self.cfg.margin_c,
                )?;
                total += fwd.eval.total;
                entry.total_loss = total;
                entry.retrieval_sum = fwd.eval.retrieval_sum;
                entry.citation_sum = fwd.eval.citation_sum;
                entry.triplet_count = batch.retrieval.len() + batch.citation.len();
                for (i, ego) in batch.egos.iter().enumerate() {
                    if fwd.upstreams[i].is_empty() {
                        continue;
                    }
                    grads.merge(backward(
                        ego,
                        &self.model.gnn,
                        &fwd.states[i],
                        &fwd.upstreams[i],
                    )?);
                }
            }
            for (i, ego) in sup_egos.iter().enumerate() {
                if sup_upstreams[i].is_empty() {
                    continue;
                }
                grads.merge(backward(ego, &self.model.gnn, &sup_states[i], &sup_upstreams[i])?);
            }
            // keep the borrow checker honest: upstreams already consumed
            sup_upstreams.clear();
            self.adam.step(&mut self.model, &grads);
            self.finish_step(entry, total)?;
        }
        Ok(())
    }

    /// Mean squared cosine error over one chunk of labeled pairs, with
    /// upstream gradients on each phrase's focal combination.
    fn supervised_batch(
        &self,
        pairs: &[PhrasePair],
        chunk: &[usize],
        ego_seed: u64,
    ) -> Result<(f64, Vec<EgoGraph>, Vec<NodeStates>, Vec<Upstream>)> {
        let sample = self.cfg.sample_params();
        let mut egos: Vec<EgoGraph> = Vec::new();
        let mut states: Vec<NodeStates> = Vec::new();
        let mut upstreams: Vec<Upstream> = Vec::new();
        let mut by_text: BTreeMap<String, usize> = BTreeMap::new();

        let mut slot = |text: &str,
                        egos: &mut Vec<EgoGraph>,
                        states: &mut Vec<NodeStates>,
                        upstreams: &mut Vec<Upstream>|
         -> Result<usize> {
            let lookup = normalize_phrase(text, false);
            if let Some(&i) = by_text.get(&lookup) {
                return Ok(i);
            }
            let ego = sample_ego_for_text(
                &self.state.universe,
                &self.state.index,
                &lookup,
                self.cfg.k,
                sample,
                ego_seed,
            )?;
            let st = forward_ego(self.state, &ego, &self.model.encoder, &self.model.gnn)?;
            upstreams.push(Upstream::new(ego.node_count()));
            states.push(st);
            egos.push(ego);
            by_text.insert(lookup, egos.len() - 1);
            Ok(egos.len() - 1)
        };

        let inv = 1.0 / chunk.len() as f64;
        let mut loss_sum = 0.0;
        for &pair_idx in chunk {
            let pair = &pairs[pair_idx];
            let i1 = slot(&pair.phrase1, &mut egos, &mut states, &mut upstreams)?;
            let i2 = slot(&pair.phrase2, &mut egos, &mut states, &mut upstreams)?;
            let phi1 = states[i1].phi(&egos[i1]);
            let phi2 = states[i2].phi(&egos[i2]);
            let n1 = phi1.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n2 = phi2.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n1 == 0.0 || n2 == 0.0 {
                log::warn!(
                    "zero-norm embedding for `{}` / `{}`; pair contributes a constant",
                    pair.phrase1,
                    pair.phrase2
                );
                loss_sum += pair.score * pair.score; // cos defined as 0
                continue;
            }
            let dot: f64 = phi1.iter().zip(&phi2).map(|(a, b)| a * b).sum();
            let cos = dot / (n1 * n2);
            let e = cos - pair.score;
            loss_sum += e * e;
            let scale = 2.0 * e * inv;
            let g1: Vec<f64> = phi1
                .iter()
                .zip(&phi2)
                .map(|(&x, &y)| scale * (y / (n1 * n2) - cos * x / (n1 * n1)))
                .collect();
            let g2: Vec<f64> = phi1
                .iter()
                .zip(&phi2)
                .map(|(&x, &y)| scale * (x / (n1 * n2) - cos * y / (n2 * n2)))
                .collect();
            let f1 = egos[i1].focal();
            upstreams[i1].add_final(f1, &g1);
            upstreams[i1].add_initial(f1, &g1);
            let f2 = egos[i2].focal();
            upstreams[i2].add_final(f2, &g2);
            upstreams[i2].add_initial(f2, &g2);
        }
        Ok((loss_sum * inv, egos, states, upstreams))
    }

    fn finalize(mut self) -> Result<TrainOutcome> {
        if self.global_step > 0
            && self.val.is_some()
            && self.global_step % self.cfg.eval_every as u64 != 0
        {
            let mut entry = self.log.pop().expect("steps were logged");
            self.run_eval(&mut entry)?;
            self.log.push(entry);
        }
        let last = Checkpoint {
            model: self.model,
            step: self.global_step,
            val_pearson: self.last_val.0,
            val_spearman: self.last_val.1,
        };
        let best = match self.best {
            Some(b) => b,
            None => {
                if self.val.is_some() {
                    log::warn!("validation never produced a metric; best = final state");
                }
                last.clone()
            }
        };
        Ok(TrainOutcome { best, last, log: self.log })
    }
}

/// Shuffled phrase stream for the joint phase; chunks wrap around.
struct JointStream {
    order: Vec<u32>,
    cursor: usize,
}

impl JointStream {
    fn new(phrase_count: usize, seed: u64, epoch: usize) -> JointStream {
        let mut order: Vec<u32> = (0..phrase_count as u32).collect();
        let mut rng = StreamKey::new(seed)
            .with_str("joint-phrase-shuffle")
            .with_num(epoch as u64)
            .rng();
        order.shuffle(&mut rng);
        JointStream { order, cursor: 0 }
    }

    fn next_chunk(&mut self, size: usize) -> Vec<u32> {
        let chunk = (0..size)
            .map(|i| self.order[(self.cursor + i) % self.order.len()])
            .collect();
        self.cursor = (self.cursor + size) % self.order.len();
        chunk
    }
}

/// Self-supervised training: triplet objectives over ego-graph batches.
pub fn train(
    state: &PipelineState,
    model: Model,
    cfg: &TrainConfig,
    val_pairs: Option<&[PhrasePair]>,
) -> Result<TrainOutcome> {
    if state.universe.phrase_count() < 2 {
        return Err(Error::TooFewPhrases(state.universe.phrase_count()));
    }
    let mut driver = Driver::new(state, cfg, model, val_pairs)?;
    for epoch in 0..cfg.max_epochs {
        driver.selfsup_epoch(epoch)?;
    }
    driver.finalize()
}

/// Supervised training: warmup epochs on the labeled objective alone,
/// then joint epochs summing it with the self-supervised objective,
/// within the overall epoch budget.
pub fn train_supervised(
    state: &PipelineState,
    model: Model,
    cfg: &TrainConfig,
    train_pairs: &[PhrasePair],
    val_pairs: Option<&[PhrasePair]>,
) -> Result<TrainOutcome> {
    if train_pairs.is_empty() {
        return Err(Error::EmptyPairs("training pairs".into()));
    }
    if state.universe.phrase_count() < 2 {
        return Err(Error::TooFewPhrases(state.universe.phrase_count()));
    }
    let mut driver = Driver::new(state, cfg, model, val_pairs)?;
    let warmup = SUPERVISED_WARMUP_EPOCHS.min(cfg.total_epoch_budget);
    for epoch in 0..warmup {
        driver.supervised_epoch(epoch, train_pairs, None)?;
    }
    for joint_idx in 0..cfg.total_epoch_budget - warmup {
        let epoch = warmup + joint_idx;
        let mut stream = JointStream::new(state.universe.phrase_count(), cfg.seed, epoch);
        driver.supervised_epoch(epoch, train_pairs, Some(&mut stream))?;
    }
    driver.finalize()
}
