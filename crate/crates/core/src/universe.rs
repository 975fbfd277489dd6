//! The phrase–patent universe and seeded ego-graph sampling.
//!
//! Nodes are the phrase vocabulary plus every patent. A phrase connects to
//! the patents BM25 retrieves for it (retrieval relation); patents connect
//! to each other through citations (citation relation, used symmetrized).
//! An ego graph is the recursively sampled neighborhood the attention
//! layers run on; sampling is keyed by (seed, focal, iteration, node), so
//! the draw for one node never depends on traversal order.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as index_sample;

use crate::corpus::Corpus;
use crate::phrasegen::PhraseSet;
use crate::retrieval::InvertedIndex;
use crate::rng::StreamKey;
use crate::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 2;
pub const DEFAULT_FANOUT: usize = 5;

/// Ego-graph sampling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleParams {
    pub iterations: usize,
    pub fanout_r: usize,
    pub fanout_c: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            iterations: DEFAULT_ITERATIONS,
            fanout_r: DEFAULT_FANOUT,
            fanout_c: DEFAULT_FANOUT,
        }
    }
}

/// A node handle inside an ego graph. `Virtual` is a focal phrase that is
/// not part of the universe (inference on unseen text); it behaves as a
/// phrase whose first-hop neighbors come from live retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EgoNode {
    Phrase(u32),
    Patent(u32),
    Virtual,
}

impl EgoNode {
    pub fn is_phrase(self) -> bool {
        matches!(self, EgoNode::Phrase(_) | EgoNode::Virtual)
    }

    pub fn is_patent(self) -> bool {
        matches!(self, EgoNode::Patent(_))
    }

    fn stream_tags(self) -> (u64, u64) {
        match self {
            EgoNode::Phrase(i) => (0, u64::from(i)),
            EgoNode::Patent(i) => (1, u64::from(i)),
            EgoNode::Virtual => (2, 0),
        }
    }
}

/// Sampled neighborhood of one focal phrase. Nodes are stored in canonical
/// order (phrases by index, then patents, then the virtual focal), and all
/// adjacency lists are sorted, so identical samples are identical structs.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoGraph {
    focal_text: String,
    focal: usize,
    nodes: Vec<EgoNode>,
    /// Iteration that first added each node; 0 for the focal.
    iteration_tag: Vec<u32>,
    /// Per node, local neighbors through retrieval edges (patents for a
    /// phrase, phrases for a patent).
    retrieval_adj: Vec<Vec<usize>>,
    /// Per node, local patent neighbors through symmetrized citations.
    citation_adj: Vec<Vec<usize>>,
    retrieval_edges: Vec<(usize, usize)>,
    citation_edges: Vec<(usize, usize)>,
}

impl EgoGraph {
    pub fn focal_text(&self) -> &str {
        &self.focal_text
    }

    pub fn focal(&self) -> usize {
        self.focal
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, local: usize) -> EgoNode {
        self.nodes[local]
    }

    pub fn nodes(&self) -> &[EgoNode] {
        &self.nodes
    }

    pub fn phrase_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_phrase()).count()
    }

    pub fn patent_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_patent()).count()
    }

    pub fn iteration_tag(&self, local: usize) -> u32 {
        self.iteration_tag[local]
    }

    pub fn retrieval_neighbors(&self, local: usize) -> &[usize] {
        &self.retrieval_adj[local]
    }

    pub fn citation_neighbors(&self, local: usize) -> &[usize] {
        &self.citation_adj[local]
    }

    /// (phrase, patent) pairs, canonically ordered.
    pub fn retrieval_edges(&self) -> &[(usize, usize)] {
        &self.retrieval_edges
    }

    /// Unordered patent pairs stored as (lower, higher), canonically ordered.
    pub fn citation_edges(&self) -> &[(usize, usize)] {
        &self.citation_edges
    }

    pub fn is_singleton(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Graphviz rendering for inspection.
    pub fn to_dot(&self, state: &PipelineState) -> String {
        let mut out = String::from("digraph ego {\n");
        for (local, node) in self.nodes.iter().enumerate() {
            let (label, shape) = match node {
                EgoNode::Patent(_) => (self.node_label(state, local), "box"),
                _ => (self.node_label(state, local), "ellipse"),
            };
            let marker = if local == self.focal { ", style=bold" } else { "" };
            let _ = writeln!(out, "  n{local} [label=\"{label}\", shape={shape}{marker}];");
        }
        for &(p, d) in &self.retrieval_edges {
            let _ = writeln!(out, "  n{p} -> n{d} [label=\"r\"];");
        }
        for &(a, b) in &self.citation_edges {
            let _ = writeln!(out, "  n{a} -> n{b} [label=\"c\", dir=none];");
        }
        out.push_str("}\n");
        out
    }

    fn node_label(&self, state: &PipelineState, local: usize) -> String {
        match self.nodes[local] {
            EgoNode::Phrase(i) => format!("phrase:{}", state.universe.phrase_text(i)),
            EgoNode::Patent(i) => format!("patent:{}", state.universe.patent_id(i)),
            EgoNode::Virtual => format!("phrase:{}", self.focal_text),
        }
    }
}

/// The two-relation graph over the phrase vocabulary and the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    phrase_texts: Vec<String>,
    patent_ids: Vec<String>,
    phrase_index: HashMap<String, u32>,
    patent_index: HashMap<String, u32>,
    /// Phrase -> retrieved patents, in retrieval rank order.
    retrieval_ranked: Vec<Vec<u32>>,
    /// Same edges with both endpoints sorted for sampling and aggregation.
    retrieval_sorted: Vec<Vec<u32>>,
    retrieval_rev: Vec<Vec<u32>>,
    /// Patent -> cited patents (directed view).
    citations_out: Vec<Vec<u32>>,
    /// Symmetrized citation adjacency.
    citations_sym: Vec<Vec<u32>>,
    isolated_phrases: usize,
}

impl Universe {
    pub fn phrase_count(&self) -> usize {
        self.phrase_texts.len()
    }

    pub fn patent_count(&self) -> usize {
        self.patent_ids.len()
    }

    pub fn phrase_text(&self, idx: u32) -> &str {
        &self.phrase_texts[idx as usize]
    }

    pub fn patent_id(&self, idx: u32) -> &str {
        &self.patent_ids[idx as usize]
    }

    pub fn phrase_idx(&self, text: &str) -> Option<u32> {
        self.phrase_index.get(text).copied()
    }

    pub fn patent_idx(&self, id: &str) -> Option<u32> {
        self.patent_index.get(id).copied()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.phrase_texts.iter().map(String::as_str)
    }

    /// Retrieved patents for a phrase, in rank order.
    pub fn retrieved_for(&self, phrase_idx: u32) -> &[u32] {
        &self.retrieval_ranked[phrase_idx as usize]
    }

    pub fn cited_by(&self, patent_idx: u32) -> &[u32] {
        &self.citations_out[patent_idx as usize]
    }

    pub fn citation_neighbors(&self, patent_idx: u32) -> &[u32] {
        &self.citations_sym[patent_idx as usize]
    }

    pub fn retrieval_edge_count(&self) -> usize {
        self.retrieval_ranked.iter().map(Vec::len).sum()
    }

    pub fn citation_edge_count(&self) -> usize {
        self.citations_out.iter().map(Vec::len).sum()
    }

    pub fn isolated_phrase_count(&self) -> usize {
        self.isolated_phrases
    }

    fn rebuild_derived(&mut self) {
        self.retrieval_sorted = self
            .retrieval_ranked
            .iter()
            .map(|l| {
                let mut s = l.clone();
                s.sort_unstable();
                s
            })
            .collect();
        let mut rev = vec![Vec::new(); self.patent_ids.len()];
        for (p, list) in self.retrieval_sorted.iter().enumerate() {
            for &d in list {
                rev[d as usize].push(p as u32);
            }
        }
        for l in rev.iter_mut() {
            l.sort_unstable();
        }
        self.retrieval_rev = rev;
        let mut sym = vec![BTreeSet::new(); self.patent_ids.len()];
        for (src, list) in self.citations_out.iter().enumerate() {
            for &dst in list {
                sym[src].insert(dst);
                sym[dst as usize].insert(src as u32);
            }
        }
        self.citations_sym = sym.into_iter().map(|s| s.into_iter().collect()).collect();
    }
}

/// Assemble the universe: phrase nodes, patent nodes, top-k retrieval
/// edges per phrase, and the corpus citation relation. Phrases that
/// retrieve nothing stay in the universe as isolated nodes.
pub fn build_universe(
    corpus: &Corpus,
    phrases: &PhraseSet,
    index: &InvertedIndex,
    k: usize,
) -> Result<Universe> {
    if phrases.is_empty() {
        return Err(Error::EmptyPhraseSet);
    }
    let patent_ids: Vec<String> = corpus.ids().map(str::to_string).collect();
    let patent_index: HashMap<String, u32> = patent_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i as u32))
        .collect();
    let phrase_texts: Vec<String> = phrases.iter().map(|(p, _)| p.to_string()).collect();
    let phrase_index: HashMap<String, u32> = phrase_texts
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();

    let mut retrieval_ranked = Vec::with_capacity(phrase_texts.len());
    let mut isolated = 0usize;
    for text in &phrase_texts {
        let ranked: Vec<u32> = index
            .retrieve_topk(text, k)
            .into_iter()
            .map(|id| patent_index[&id])
            .collect();
        if ranked.is_empty() {
            isolated += 1;
            log::warn!("phrase `{text}` retrieves no documents; kept as an isolated node");
        }
        retrieval_ranked.push(ranked);
    }

    let mut citations_out = vec![Vec::new(); patent_ids.len()];
    for (src, dst) in corpus.citations() {
        citations_out[patent_index[src] as usize].push(patent_index[dst]);
    }
    for l in citations_out.iter_mut() {
        l.sort_unstable();
    }

    let mut universe = Universe {
        phrase_texts,
        patent_ids,
        phrase_index,
        patent_index,
        retrieval_ranked,
        retrieval_sorted: Vec::new(),
        retrieval_rev: Vec::new(),
        citations_out,
        citations_sym: Vec::new(),
        isolated_phrases: isolated,
    };
    universe.rebuild_derived();
    Ok(universe)
}

/// The three artifact paths for a universe base path.
pub fn universe_paths(base: impl AsRef<Path>) -> (PathBuf, PathBuf, PathBuf) {
    let base = base.as_ref();
    let with = |suffix: &str| {
        let mut name = base.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(suffix);
        base.with_file_name(name)
    };
    (with(".nodes.tsv"), with(".retrieval.tsv"), with(".citations.tsv"))
}

/// Persist as three tab-separated files: node lists, `phrase<TAB>patent`
/// retrieval edges in rank order, and directed `src<TAB>dst` citations.
pub fn write_universe(universe: &Universe, base: impl AsRef<Path>) -> Result<()> {
    let (nodes_path, retr_path, cite_path) = universe_paths(&base);

    let open = |p: &Path| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?,
        ))
    };
    let shown = |p: &Path| p.display().to_string();

    let mut out = open(&nodes_path)?;
    for text in &universe.phrase_texts {
        writeln!(out, "phrase\t{text}").map_err(|e| Error::io(shown(&nodes_path), e))?;
    }
    for id in &universe.patent_ids {
        writeln!(out, "patent\t{id}").map_err(|e| Error::io(shown(&nodes_path), e))?;
    }
    out.flush().map_err(|e| Error::io(shown(&nodes_path), e))?;

    let mut out = open(&retr_path)?;
    for (p, ranked) in universe.retrieval_ranked.iter().enumerate() {
        for &d in ranked {
            writeln!(
                out,
                "{}\t{}",
                universe.phrase_texts[p], universe.patent_ids[d as usize]
            )
            .map_err(|e| Error::io(shown(&retr_path), e))?;
        }
    }
    out.flush().map_err(|e| Error::io(shown(&retr_path), e))?;

    let mut out = open(&cite_path)?;
    for (src, list) in universe.citations_out.iter().enumerate() {
        for &dst in list {
            writeln!(
                out,
                "{}\t{}",
                universe.patent_ids[src], universe.patent_ids[dst as usize]
            )
            .map_err(|e| Error::io(shown(&cite_path), e))?;
        }
    }
    out.flush().map_err(|e| Error::io(shown(&cite_path), e))?;
    Ok(())
}

pub fn read_universe(base: impl AsRef<Path>) -> Result<Universe> {
    let (nodes_path, retr_path, cite_path) = universe_paths(&base);

    let read_lines = |p: &Path| -> Result<Vec<String>> {
        let file = File::open(p).map_err(|e| Error::io(p.display().to_string(), e))?;
        BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(p.display().to_string(), e))
    };
    let split = |p: &Path, lineno: usize, line: &str| -> Result<(String, String)> {
        line.split_once('\t')
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .ok_or_else(|| Error::malformed(p.display().to_string(), lineno, "expected two tab-separated fields"))
    };

    let mut phrase_texts = Vec::new();
    let mut patent_ids = Vec::new();
    for (i, line) in read_lines(&nodes_path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (kind, id) = split(&nodes_path, i + 1, line)?;
        match kind.as_str() {
            "phrase" => phrase_texts.push(id),
            "patent" => patent_ids.push(id),
            other => {
                return Err(Error::malformed(
                    nodes_path.display().to_string(),
                    i + 1,
                    format!("unknown node kind `{other}`"),
                ))
            }
        }
    }
    for (name, list) in [("phrase", &phrase_texts), ("patent", &patent_ids)] {
        if !list.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invalid(format!(
                "{}: {name} ids must be strictly increasing",
                nodes_path.display()
            )));
        }
    }
    let phrase_index: HashMap<String, u32> = phrase_texts
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();
    let patent_index: HashMap<String, u32> = patent_ids
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();

    let mut retrieval_ranked = vec![Vec::new(); phrase_texts.len()];
    for (i, line) in read_lines(&retr_path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (p, d) = split(&retr_path, i + 1, line)?;
        let p = *phrase_index.get(&p).ok_or_else(|| {
            Error::malformed(retr_path.display().to_string(), i + 1, format!("unknown phrase `{p}`"))
        })?;
        let d = *patent_index.get(&d).ok_or_else(|| {
            Error::malformed(retr_path.display().to_string(), i + 1, format!("unknown patent `{d}`"))
        })?;
        retrieval_ranked[p as usize].push(d);
    }

    let mut citations_out = vec![Vec::new(); patent_ids.len()];
    for (i, line) in read_lines(&cite_path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (s, d) = split(&cite_path, i + 1, line)?;
        let s = *patent_index.get(&s).ok_or_else(|| {
            Error::malformed(cite_path.display().to_string(), i + 1, format!("unknown patent `{s}`"))
        })?;
        let d = *patent_index.get(&d).ok_or_else(|| {
            Error::malformed(cite_path.display().to_string(), i + 1, format!("unknown patent `{d}`"))
        })?;
        citations_out[s as usize].push(d);
    }
    for l in citations_out.iter_mut() {
        l.sort_unstable();
    }

    let isolated = retrieval_ranked.iter().filter(|l| l.is_empty()).count();
    let mut universe = Universe {
        phrase_texts,
        patent_ids,
        phrase_index,
        patent_index,
        retrieval_ranked,
        retrieval_sorted: Vec::new(),
        retrieval_rev: Vec::new(),
        citations_out,
        citations_sym: Vec::new(),
        isolated_phrases: isolated,
    };
    universe.rebuild_derived();
    Ok(universe)
}

fn node_rng(seed: u64, focal_text: &str, iteration: usize, node: EgoNode) -> rand_chacha::ChaCha8Rng {
    let (kind, idx) = node.stream_tags();
    StreamKey::new(seed)
        .with_str("ego")
        .with_str(focal_text)
        .with_num(iteration as u64)
        .with_num(kind)
        .with_num(idx)
        .rng()
}

fn pick(rng: &mut rand_chacha::ChaCha8Rng, list: &[u32], fanout: usize) -> Vec<u32> {
    if fanout == 0 || list.is_empty() {
        return Vec::new();
    }
    if list.len() <= fanout {
        return list.to_vec();
    }
    index_sample(rng, list.len(), fanout)
        .into_iter()
        .map(|i| list[i])
        .collect()
}

/// Sample the ego graph of a universe phrase.
pub fn sample_ego(
    universe: &Universe,
    phrase: &str,
    params: SampleParams,
    seed: u64,
) -> Result<EgoGraph> {
    let idx = universe
        .phrase_idx(phrase)
        .ok_or_else(|| Error::UnknownPhrase(phrase.to_string()))?;
    sample_impl(universe, EgoNode::Phrase(idx), phrase, None, params, seed)
}

/// Sample an ego graph for any phrase text. A vocabulary phrase uses its
/// stored retrieval edges; an unseen phrase enters as a virtual focal node
/// whose first hop is live top-k retrieval, and expansion continues inside
/// the universe.
pub fn sample_ego_for_text(
    universe: &Universe,
    index: &InvertedIndex,
    phrase: &str,
    k: usize,
    params: SampleParams,
    seed: u64,
) -> Result<EgoGraph> {
    if universe.phrase_idx(phrase).is_some() {
        return sample_ego(universe, phrase, params, seed);
    }
    let mut live: Vec<u32> = Vec::new();
    for id in index.retrieve_topk(phrase, k) {
        let idx = universe
            .patent_idx(&id)
            .ok_or_else(|| Error::Invalid(format!("index and universe disagree on document `{id}`")))?;
        live.push(idx);
    }
    live.sort_unstable();
    sample_impl(universe, EgoNode::Virtual, phrase, Some(live), params, seed)
}

fn sample_impl(
    universe: &Universe,
    focal: EgoNode,
    focal_text: &str,
    virtual_retrieval: Option<Vec<u32>>,
    params: SampleParams,
    seed: u64,
) -> Result<EgoGraph> {
    let mut nodes: Vec<EgoNode> = vec![focal];
    let mut tags: Vec<u32> = vec![0];
    let mut present: HashMap<EgoNode, usize> = HashMap::from([(focal, 0)]);
    let mut r_edges: BTreeSet<(EgoNode, EgoNode)> = BTreeSet::new();
    let mut c_edges: BTreeSet<(EgoNode, EgoNode)> = BTreeSet::new();

    for t in 1..=params.iterations {
        let mut snapshot = nodes.clone();
        snapshot.sort_unstable();
        for node in snapshot {
            let mut rng = node_rng(seed, focal_text, t, node);
            let retrieval_list: &[u32] = match node {
                EgoNode::Phrase(i) => &universe.retrieval_sorted[i as usize],
                EgoNode::Virtual => virtual_retrieval.as_deref().unwrap_or(&[]),
                EgoNode::Patent(i) => &universe.retrieval_rev[i as usize],
            };
            for picked in pick(&mut rng, retrieval_list, params.fanout_r) {
                let (neighbor, edge) = match node {
                    EgoNode::Patent(_) => {
                        let n = EgoNode::Phrase(picked);
                        (n, (n, node))
                    }
                    _ => {
                        let n = EgoNode::Patent(picked);
                        (n, (node, n))
                    }
                };
                if !present.contains_key(&neighbor) {
                    present.insert(neighbor, nodes.len());
                    nodes.push(neighbor);
                    tags.push(t as u32);
                }
                r_edges.insert(edge);
            }
            if let EgoNode::Patent(i) = node {
                let citation_list = &universe.citations_sym[i as usize];
                for picked in pick(&mut rng, citation_list, params.fanout_c) {
                    let neighbor = EgoNode::Patent(picked);
                    if !present.contains_key(&neighbor) {
                        present.insert(neighbor, nodes.len());
                        nodes.push(neighbor);
                        tags.push(t as u32);
                    }
                    c_edges.insert((node.min(neighbor), node.max(neighbor)));
                }
            }
        }
    }

    // Canonical assembly: nodes sorted, adjacency sorted, edges sorted.
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by_key(|&i| nodes[i]);
    let mut local_of: HashMap<EgoNode, usize> = HashMap::with_capacity(nodes.len());
    let mut sorted_nodes = Vec::with_capacity(nodes.len());
    let mut sorted_tags = Vec::with_capacity(nodes.len());
    for (new_local, &old) in order.iter().enumerate() {
        local_of.insert(nodes[old], new_local);
        sorted_nodes.push(nodes[old]);
        sorted_tags.push(tags[old]);
    }

    let n = sorted_nodes.len();
    let mut retrieval_adj = vec![Vec::new(); n];
    let mut citation_adj = vec![Vec::new(); n];
    let retrieval_edges: Vec<(usize, usize)> = r_edges
        .iter()
        .map(|&(p, d)| (local_of[&p], local_of[&d]))
        .collect();
    for &(p, d) in &retrieval_edges {
        retrieval_adj[p].push(d);
        retrieval_adj[d].push(p);
    }
    let citation_edges: Vec<(usize, usize)> = c_edges
        .iter()
        .map(|&(a, b)| (local_of[&a], local_of[&b]))
        .collect();
    for &(a, b) in &citation_edges {
        citation_adj[a].push(b);
        citation_adj[b].push(a);
    }
    for l in retrieval_adj.iter_mut().chain(citation_adj.iter_mut()) {
        l.sort_unstable();
    }

    Ok(EgoGraph {
        focal_text: focal_text.to_string(),
        focal: local_of[&focal],
        nodes: sorted_nodes,
        iteration_tag: sorted_tags,
        retrieval_adj,
        citation_adj,
        retrieval_edges,
        citation_edges,
    })
}

/// Everything inference and training need in one place.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub corpus: Corpus,
    pub phrases: PhraseSet,
    pub index: InvertedIndex,
    pub universe: Universe,
}

impl PipelineState {
    /// (stable id, text to encode) for a node of an ego graph.
    pub fn node_key_text<'a>(&'a self, ego: &'a EgoGraph, local: usize) -> Result<(&'a str, &'a str)> {
        match ego.node(local) {
            EgoNode::Phrase(i) => {
                let text = self.universe.phrase_text(i);
                Ok((text, text))
            }
            EgoNode::Patent(i) => {
                let id = self.universe.patent_id(i);
                Ok((id, self.corpus.abstract_text(id)?))
            }
            EgoNode::Virtual => Ok((ego.focal_text(), ego.focal_text())),
        }
    }
}

/// True when every node is reachable from the focal through ego edges.
/// Sampling guarantees it; file-loaded or hand-built graphs may not.
pub fn connected_to_focal(ego: &EgoGraph) -> bool {
    let n = ego.node_count();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([ego.focal()]);
    seen[ego.focal()] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in ego
            .retrieval_neighbors(v)
            .iter()
            .chain(ego.citation_neighbors(v))
        {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == n
}
