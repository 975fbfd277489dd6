//! Two-relation graph attention over ego graphs, with a hand-written
//! reverse pass.
//!
//! One aggregation step: q = Wq·t, k_j = Wk·n_j, v_j = Wv·n_j,
//! alpha = softmax(q·k_j / sqrt(d)), out = relu(Ws·t + sum_j alpha_j v_j).
//! A node with no neighbors passes through unchanged. Phrase nodes attend
//! to their retrieved patents; patent nodes average a retrieval-relation
//! aggregation (over phrases) and a citation-relation aggregation (over
//! patents). All layer updates are synchronous: layer l+1 reads only
//! layer-l states.
//!
//! The forward pass records attention weights and pre-activation sums per
//! aggregation; the backward pass replays them in reverse. relu and the
//! hinge in the losses use subgradient 0 at their kinks.

use std::collections::BTreeMap;

use crate::encoder::{gaussian_into, EncodeTrace, Encoder, INIT_STDDEV};
use crate::rng::StreamKey;
use crate::universe::{EgoGraph, PipelineState};
use crate::{Error, Result};

pub const DEFAULT_LAYERS: usize = 2;

/// One attention head: four d x d matrices, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHeadParams {
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub w_s: Vec<f64>,
}

impl AttentionHeadParams {
    fn zeros(dim: usize) -> Self {
        let m = vec![0.0; dim * dim];
        AttentionHeadParams {
            w_q: m.clone(),
            w_k: m.clone(),
            w_v: m.clone(),
            w_s: m,
        }
    }

    pub fn matrices(&self) -> [&Vec<f64>; 4] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_s]
    }

    pub fn matrices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_s]
    }
}

/// Per-layer parameters: one head for phrase updates and one per relation
/// for patent updates.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub phrase: AttentionHeadParams,
    pub patent_retrieval: AttentionHeadParams,
    pub patent_citation: AttentionHeadParams,
}

impl LayerParams {
    pub fn heads(&self) -> [&AttentionHeadParams; 3] {
        [&self.phrase, &self.patent_retrieval, &self.patent_citation]
    }

    pub fn heads_mut(&mut self) -> [&mut AttentionHeadParams; 3] {
        [&mut self.phrase, &mut self.patent_retrieval, &mut self.patent_citation]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    dim: usize,
    pub layers: Vec<LayerParams>,
}

impl GnnParams {
    /// Fresh parameters, every entry drawn from N(0, 0.02).
    pub fn init(dim: usize, layer_count: usize, seed: u64) -> GnnParams {
        let mut rng = StreamKey::new(seed).with_str("gnn-init").rng();
        let layers = (0..layer_count)
            .map(|_| {
                let mut head = || AttentionHeadParams {
                    w_q: gaussian_into(&mut rng, dim * dim, INIT_STDDEV),
                    w_k: gaussian_into(&mut rng, dim * dim, INIT_STDDEV),
                    w_v: gaussian_into(&mut rng, dim * dim, INIT_STDDEV),
                    w_s: gaussian_into(&mut rng, dim * dim, INIT_STDDEV),
                };
                LayerParams {
                    phrase: head(),
                    patent_retrieval: head(),
                    patent_citation: head(),
                }
            })
            .collect();
        GnnParams { dim, layers }
    }

    pub fn zeros(dim: usize, layer_count: usize) -> GnnParams {
        GnnParams {
            dim,
            layers: (0..layer_count)
                .map(|_| LayerParams {
                    phrase: AttentionHeadParams::zeros(dim),
                    patent_retrieval: AttentionHeadParams::zeros(dim),
                    patent_citation: AttentionHeadParams::zeros(dim),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// 3 heads x 4 matrices x d^2 per layer.
    pub fn param_count(&self) -> usize {
        self.layers.len() * 3 * 4 * self.dim * self.dim
    }
}

// Row-major d x d helpers. The dimension is small enough that plain loops
// beat anything that allocates.

fn matvec(m: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for j in 0..d {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
    y
}

/// y += M^T g, the input-side gradient of y = M x.
fn matvec_t_add(m: &[f64], g: &[f64], d: usize, y: &mut [f64]) {
    for i in 0..d {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        let row = &m[i * d..(i + 1) * d];
        for j in 0..d {
            y[j] += gi * row[j];
        }
    }
}

/// dM += a (x) b for y = M x with output-side gradient a and input x = b.
fn outer_add(dm: &mut [f64], a: &[f64], b: &[f64], d: usize) {
    for i in 0..d {
        let ai = a[i];
        if ai == 0.0 {
            continue;
        }
        let row = &mut dm[i * d..(i + 1) * d];
        for j in 0..d {
            row[j] += ai * b[j];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attention weights and pre-activation for one aggregation.
#[derive(Debug, Clone)]
struct AggTape {
    neighbors: Vec<usize>,
    alphas: Vec<f64>,
    z: Vec<f64>,
}

#[derive(Debug, Clone)]
enum NodeTape {
    /// Phrase with no neighbors: the state passes through unchanged.
    Identity,
    Phrase(AggTape),
    /// Patent update: mean of the two relation branches; a missing branch
    /// contributes the unchanged state.
    Patent {
        retrieval: Option<AggTape>,
        citation: Option<AggTape>,
    },
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn aggregate_tape(
    head: &AttentionHeadParams,
    target: &[f64],
    neighbor_states: &[&[f64]],
    neighbors: Vec<usize>,
    d: usize,
) -> (Vec<f64>, AggTape) {
    let q = matvec(&head.w_q, target, d);
    let scale = 1.0 / (d as f64).sqrt();
    let scores: Vec<f64> = neighbor_states
        .iter()
        .map(|n| dot(&q, &matvec(&head.w_k, n, d)) * scale)
        .collect();
    let alphas = softmax(&scores);
    let mut z = matvec(&head.w_s, target, d);
    for (alpha, n) in alphas.iter().zip(neighbor_states) {
        let v = matvec(&head.w_v, n, d);
        for i in 0..d {
            z[i] += alpha * v[i];
        }
    }
    let out = z.iter().map(|&x| x.max(0.0)).collect();
    (out, AggTape { neighbors, alphas, z })
}

/// One attention aggregation. With no neighbors the target is returned
/// unchanged (identity fallback, not relu(Ws t)).
pub fn gat_aggregate(
    head: &AttentionHeadParams,
    target: &[f64],
    neighbors: &[&[f64]],
) -> Result<Vec<f64>> {
    let d = target.len();
    if head.w_q.len() != d * d {
        return Err(Error::DimMismatch { expected: d * d, got: head.w_q.len() });
    }
    for n in neighbors {
        if n.len() != d {
            return Err(Error::DimMismatch { expected: d, got: n.len() });
        }
    }
    if neighbors.is_empty() {
        return Ok(target.to_vec());
    }
    Ok(aggregate_tape(head, target, neighbors, Vec::new(), d).0)
}

/// Attention weights alone, for inspection and invariant tests.
pub fn gat_attention(
    head: &AttentionHeadParams,
    target: &[f64],
    neighbors: &[&[f64]],
) -> Result<Vec<f64>> {
    let d = target.len();
    if neighbors.is_empty() {
        return Ok(Vec::new());
    }
    for n in neighbors {
        if n.len() != d {
            return Err(Error::DimMismatch { expected: d, got: n.len() });
        }
    }
    let q = matvec(&head.w_q, target, d);
    let scale = 1.0 / (d as f64).sqrt();
    let scores: Vec<f64> = neighbors
        .iter()
        .map(|n| dot(&q, &matvec(&head.w_k, n, d)) * scale)
        .collect();
    Ok(softmax(&scores))
}

/// All per-node states plus the tape for one ego graph's forward pass.
#[derive(Debug, Clone)]
pub struct NodeStates {
    dim: usize,
    /// layers[l][local] is h^l(local); layers has layer_count + 1 entries.
    layers: Vec<Vec<Vec<f64>>>,
    tape: Vec<Vec<NodeTape>>,
    traces: Vec<Option<EncodeTrace>>,
}

impl NodeStates {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn h(&self, layer: usize, local: usize) -> &[f64] {
        &self.layers[layer][local]
    }

    pub fn h0(&self, local: usize) -> &[f64] {
        &self.layers[0][local]
    }

    pub fn h_last(&self, local: usize) -> &[f64] {
        &self.layers[self.layers.len() - 1][local]
    }

    /// Final embedding of the focal: initial state plus final state.
    pub fn phi(&self, ego: &EgoGraph) -> Vec<f64> {
        combine_embedding(self.h0(ego.focal()), self.h_last(ego.focal())).expect("same dim")
    }

    /// Sum of attention weights for every recorded aggregation; each entry
    /// must be 1 up to rounding.
    pub fn attention_sums(&self) -> Vec<f64> {
        let mut sums = Vec::new();
        for layer in &self.tape {
            for node in layer {
                match node {
                    NodeTape::Identity => {}
                    NodeTape::Phrase(t) => sums.push(t.alphas.iter().sum()),
                    NodeTape::Patent { retrieval, citation } => {
                        for t in [retrieval, citation].into_iter().flatten() {
                            sums.push(t.alphas.iter().sum());
                        }
                    }
                }
            }
        }
        sums
    }
}

/// Element-wise sum of the initial and final focal states.
pub fn combine_embedding(h0: &[f64], h_last: &[f64]) -> Result<Vec<f64>> {
    if h0.len() != h_last.len() {
        return Err(Error::LengthMismatch { left: h0.len(), right: h_last.len() });
    }
    Ok(h0.iter().zip(h_last).map(|(a, b)| a + b).collect())
}

/// Run the encoder and all attention layers over one ego graph.
pub fn forward_ego(
    state: &PipelineState,
    ego: &EgoGraph,
    encoder: &Encoder,
    params: &GnnParams,
) -> Result<NodeStates> {
    let d = params.dim();
    if encoder.dim() != d {
        return Err(Error::DimMismatch { expected: d, got: encoder.dim() });
    }
    let n = ego.node_count();

    let mut h0 = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for local in 0..n {
        let (key, text) = state.node_key_text(ego, local)?;
        let (vec, trace) = encoder.encode_node(key, text)?;
        h0.push(vec);
        traces.push(trace);
    }

    let mut layers = vec![h0];
    let mut tape = Vec::with_capacity(params.layer_count());
    for layer_params in &params.layers {
        let prev = layers.last().unwrap();
        let mut next = Vec::with_capacity(n);
        let mut layer_tape = Vec::with_capacity(n);
        for local in 0..n {
            let target = &prev[local];
            if ego.node(local).is_phrase() {
                let neigh = ego.retrieval_neighbors(local);
                if neigh.is_empty() {
                    next.push(target.clone());
                    layer_tape.push(NodeTape::Identity);
                } else {
                    let refs: Vec<&[f64]> = neigh.iter().map(|&j| prev[j].as_slice()).collect();
                    let (out, t) =
                        aggregate_tape(&layer_params.phrase, target, &refs, neigh.to_vec(), d);
                    next.push(out);
                    layer_tape.push(NodeTape::Phrase(t));
                }
            } else {
                let branch = |head: &AttentionHeadParams, neigh: &[usize]| {
                    if neigh.is_empty() {
                        (target.clone(), None)
                    } else {
                        let refs: Vec<&[f64]> = neigh.iter().map(|&j| prev[j].as_slice()).collect();
                        let (out, t) = aggregate_tape(head, target, &refs, neigh.to_vec(), d);
                        (out, Some(t))
                    }
                };
                let (h_r, tape_r) =
                    branch(&layer_params.patent_retrieval, ego.retrieval_neighbors(local));
                let (h_c, tape_c) =
                    branch(&layer_params.patent_citation, ego.citation_neighbors(local));
                let mean = h_r.iter().zip(&h_c).map(|(a, b)| 0.5 * (a + b)).collect();
                next.push(mean);
                layer_tape.push(NodeTape::Patent { retrieval: tape_r, citation: tape_c });
            }
        }
        layers.push(next);
        tape.push(layer_tape);
    }

    Ok(NodeStates { dim: d, layers, tape, traces })
}

/// Gradients accumulated by [`backward`]: attention parameters in the same
/// shape as [`GnnParams`], encoder gradients sparse by bucket.
#[derive(Debug)]
pub struct Grads {
    pub gnn: GnnParams,
    pub encoder: BTreeMap<u32, Vec<f64>>,
}

impl Grads {
    pub fn zeros(dim: usize, layer_count: usize) -> Grads {
        Grads {
            gnn: GnnParams::zeros(dim, layer_count),
            encoder: BTreeMap::new(),
        }
    }

    pub fn merge(&mut self, other: Grads) {
        for (mine, theirs) in self.gnn.layers.iter_mut().zip(other.gnn.layers) {
            for (m, t) in mine.heads_mut().into_iter().zip(theirs.heads()) {
                for (mm, tm) in m.matrices_mut().into_iter().zip(t.matrices()) {
                    for (a, b) in mm.iter_mut().zip(tm) {
                        *a += b;
                    }
                }
            }
        }
        let dim = self.gnn.dim();
        for (bucket, vec) in other.encoder {
            let slot = self.encoder.entry(bucket).or_insert_with(|| vec![0.0; dim]);
            for (a, b) in slot.iter_mut().zip(vec) {
                *a += b;
            }
        }
    }
}

/// Loss gradients flowing into an ego graph: on final-layer states, and
/// directly on initial states for paths that read h^0 outside the layers
/// (the focal combination does).
#[derive(Debug, Clone)]
pub struct Upstream {
    pub final_layer: Vec<Option<Vec<f64>>>,
    pub initial_direct: Vec<Option<Vec<f64>>>,
}

impl Upstream {
    pub fn new(node_count: usize) -> Upstream {
        Upstream {
            final_layer: vec![None; node_count],
            initial_direct: vec![None; node_count],
        }
    }

    pub fn add_final(&mut self, local: usize, grad: &[f64]) {
        add_to(&mut self.final_layer[local], grad);
    }

    pub fn add_initial(&mut self, local: usize, grad: &[f64]) {
        add_to(&mut self.initial_direct[local], grad);
    }

    pub fn is_empty(&self) -> bool {
        self.final_layer.iter().all(Option::is_none)
            && self.initial_direct.iter().all(Option::is_none)
    }
}

fn add_to(slot: &mut Option<Vec<f64>>, grad: &[f64]) {
    match slot {
        Some(v) => {
            for (a, b) in v.iter_mut().zip(grad) {
                *a += b;
            }
        }
        None => *slot = Some(grad.to_vec()),
    }
}

fn gat_backward(
    head: &AttentionHeadParams,
    head_grads: &mut AttentionHeadParams,
    tape: &AggTape,
    prev: &[Vec<f64>],
    target_local: usize,
    g_out: &[f64],
    g_prev: &mut [Vec<f64>],
    d: usize,
) {
    let target = &prev[target_local];
    let g_z: Vec<f64> = g_out
        .iter()
        .zip(&tape.z)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();

    // Self path: z += Ws t.
    outer_add(&mut head_grads.w_s, &g_z, target, d);
    matvec_t_add(&head.w_s, &g_z, d, &mut g_prev[target_local]);

    // Value path and attention scores.
    let q = matvec(&head.w_q, target, d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut g_alpha = Vec::with_capacity(tape.neighbors.len());
    for (&j, &alpha) in tape.neighbors.iter().zip(&tape.alphas) {
        let v_grad: Vec<f64> = g_z.iter().map(|&g| alpha * g).collect();
        outer_add(&mut head_grads.w_v, &v_grad, &prev[j], d);
        matvec_t_add(&head.w_v, &v_grad, d, &mut g_prev[j]);
        g_alpha.push(dot(&g_z, &matvec(&head.w_v, &prev[j], d)));
    }

    // Softmax backward: g_s_j = alpha_j (g_alpha_j - sum_m alpha_m g_alpha_m).
    let mix: f64 = tape.alphas.iter().zip(&g_alpha).map(|(a, g)| a * g).sum();
    let mut g_q = vec![0.0; d];
    for ((&j, &alpha), &ga) in tape.neighbors.iter().zip(&tape.alphas).zip(&g_alpha) {
        let g_s = alpha * (ga - mix) * scale;
        if g_s == 0.0 {
            continue;
        }
        let k_j = matvec(&head.w_k, &prev[j], d);
        for i in 0..d {
            g_q[i] += g_s * k_j[i];
        }
        let g_k: Vec<f64> = q.iter().map(|&x| g_s * x).collect();
        outer_add(&mut head_grads.w_k, &g_k, &prev[j], d);
        matvec_t_add(&head.w_k, &g_k, d, &mut g_prev[j]);
    }
    outer_add(&mut head_grads.w_q, &g_q, target, d);
    matvec_t_add(&head.w_q, &g_q, d, &mut g_prev[target_local]);
}

/// Reverse pass through the recorded forward. Returns parameter gradients
/// for the attention layers and sparse per-bucket encoder gradients.
pub fn backward(
    ego: &EgoGraph,
    params: &GnnParams,
    states: &NodeStates,
    upstream: &Upstream,
) -> Result<Grads> {
    let d = params.dim();
    let n = ego.node_count();
    if upstream.final_layer.len() != n || upstream.initial_direct.len() != n {
        return Err(Error::LengthMismatch { left: upstream.final_layer.len(), right: n });
    }
    let mut grads = Grads::zeros(d, params.layer_count());

    let mut g: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
    for (slot, up) in g.iter_mut().zip(&upstream.final_layer) {
        if let Some(up) = up {
            for (a, b) in slot.iter_mut().zip(up) {
                *a += b;
            }
        }
    }

    for l in (0..params.layer_count()).rev() {
        let prev = &states.layers[l];
        let layer_params = &params.layers[l];
        let layer_grads = &mut grads.gnn.layers[l];
        let mut g_prev: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
        for local in 0..n {
            let g_out = &g[local];
            if g_out.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &states.tape[l][local] {
                NodeTape::Identity => {
                    for (a, b) in g_prev[local].iter_mut().zip(g_out) {
                        *a += b;
                    }
                }
                NodeTape::Phrase(tape) => {
                    gat_backward(
                        &layer_params.phrase,
                        &mut layer_grads.phrase,
                        tape,
                        prev,
                        local,
                        g_out,
                        &mut g_prev,
                        d,
                    );
                }
                NodeTape::Patent { retrieval, citation } => {
                    let half: Vec<f64> = g_out.iter().map(|&x| 0.5 * x).collect();
                    match retrieval {
                        Some(tape) => gat_backward(
                            &layer_params.patent_retrieval,
                            &mut layer_grads.patent_retrieval,
                            tape,
                            prev,
                            local,
                            &half,
                            &mut g_prev,
                            d,
                        ),
                        None => {
                            for (a, b) in g_prev[local].iter_mut().zip(&half) {
                                *a += b;
                            }
                        }
                    }
                    match citation {
                        Some(tape) => gat_backward(
                            &layer_params.patent_citation,
                            &mut layer_grads.patent_citation,
                            tape,
                            prev,
                            local,
                            &half,
                            &mut g_prev,
                            d,
                        ),
                        None => {
                            for (a, b) in g_prev[local].iter_mut().zip(&half) {
                                *a += b;
                            }
                        }
                    }
                }
            }
        }
        g = g_prev;
    }

    for (slot, up) in g.iter_mut().zip(&upstream.initial_direct) {
        if let Some(up) = up {
            for (a, b) in slot.iter_mut().zip(up) {
                *a += b;
            }
        }
    }

    // Scatter h^0 gradients into the encoder table through the traces.
    for (local, trace) in states.traces.iter().enumerate() {
        let Some(trace) = trace else { continue };
        if trace.token_count == 0 {
            continue;
        }
        let g0 = &g[local];
        if g0.iter().all(|&x| x == 0.0) {
            continue;
        }
        let inv = 1.0 / f64::from(trace.token_count);
        for &(bucket, count) in &trace.buckets {
            let w = f64::from(count) * inv;
            let slot = grads.encoder.entry(bucket).or_insert_with(|| vec![0.0; d]);
            for (a, b) in slot.iter_mut().zip(g0) {
                *a += w * b;
            }
        }
    }

    Ok(grads)
}
