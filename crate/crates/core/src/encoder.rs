//! Initial node embeddings.
//!
//! The trainable default hashes each token into one of `bucket_count`
//! rows of an embedding table and averages the rows; hashing keeps the
//! parameter count independent of vocabulary size and needs no vocabulary
//! pass. A frozen table keyed by node id can be swapped in when external
//! vectors exist, and a frozen per-node random variant backs the
//! graph-only baseline.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::tokenize;
use crate::rng::{stable_hash, StreamKey};
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_BUCKET_COUNT: usize = 65_536;
pub const INIT_STDDEV: f64 = 0.02;

/// Dense `bucket_count x dim` table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    bucket_count: usize,
    rows: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, bucket_count: usize, rows: Vec<f64>) -> Result<EmbeddingTable> {
        if rows.len() != dim * bucket_count {
            return Err(Error::DimMismatch {
                expected: dim * bucket_count,
                got: rows.len(),
            });
        }
        Ok(EmbeddingTable {
            dim,
            bucket_count,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn bucket_of(&self, token: &str) -> u32 {
        (stable_hash(token.as_bytes()) % self.bucket_count as u64) as u32
    }

    pub fn row(&self, bucket: u32) -> &[f64] {
        let start = bucket as usize * self.dim;
        &self.rows[start..start + self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [f64] {
        &mut self.rows
    }
}

/// Which tokens hit which buckets; the reverse pass distributes a node's
/// gradient over `buckets` weighted by count / token_count.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTrace {
    /// (bucket, occurrences), ascending by bucket.
    pub buckets: Vec<(u32, u32)>,
    pub token_count: u32,
}

/// Frozen id-keyed vectors loaded from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedTable {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

impl PrecomputedTable {
    pub fn new(dim: usize, rows: BTreeMap<String, Vec<f64>>) -> Result<PrecomputedTable> {
        for row in rows.values() {
            if row.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: row.len() });
            }
        }
        Ok(PrecomputedTable { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    /// Trainable hashed bag-of-tokens mean.
    HashMean(EmbeddingTable),
    /// Frozen lookup by node id; unknown ids are an error.
    Precomputed(PrecomputedTable),
    /// Frozen random vector per node id. Backs the graph-only baseline,
    /// where only the attention layers carry signal.
    RandomFrozen { dim: usize, seed: u64 },
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Encoder::HashMean(t) => t.dim,
            Encoder::Precomputed(t) => t.dim,
            Encoder::RandomFrozen { dim, .. } => *dim,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Encoder::HashMean(_))
    }

    pub fn hash_table(&self) -> Option<&EmbeddingTable> {
        match self {
            Encoder::HashMean(t) => Some(t),
            _ => None,
        }
    }

    pub fn hash_table_mut(&mut self) -> Option<&mut EmbeddingTable> {
        match self {
            Encoder::HashMean(t) => Some(t),
            _ => None,
        }
    }

    /// Embed one node. `key` is the node's stable id (a phrase's text, a
    /// patent's id); `text` is what gets tokenized for the hashed mean.
    /// The trace is present only for the trainable variant.
    pub fn encode_node(&self, key: &str, text: &str) -> Result<(Vec<f64>, Option<EncodeTrace>)> {
        match self {
            Encoder::HashMean(table) => {
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    log::warn!("empty text for node `{key}`: embedding is the zero vector");
                    return Ok((
                        vec![0.0; table.dim],
                        Some(EncodeTrace {
                            buckets: Vec::new(),
                            token_count: 0,
                        }),
                    ));
                }
                let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
                for t in &tokens {
                    *counts.entry(table.bucket_of(t)).or_default() += 1;
                }
                let mut vec = vec![0.0; table.dim];
                for (&bucket, &count) in &counts {
                    let row = table.row(bucket);
                    let w = count as f64;
                    for (v, r) in vec.iter_mut().zip(row) {
                        *v += w * r;
                    }
                }
                let inv = 1.0 / tokens.len() as f64;
                for v in vec.iter_mut() {
                    *v *= inv;
                }
                Ok((
                    vec,
                    Some(EncodeTrace {
                        buckets: counts.into_iter().collect(),
                        token_count: tokens.len() as u32,
                    }),
                ))
            }
            Encoder::Precomputed(table) => match table.rows.get(key) {
                Some(row) => Ok((row.clone(), None)),
                None => Err(Error::MissingEmbedding(key.to_string())),
            },
            Encoder::RandomFrozen { dim, seed } => {
                let mut rng = StreamKey::new(*seed)
                    .with_str("graph-only-node")
                    .with_str(key)
                    .rng();
                let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
                Ok(((0..*dim).map(|_| normal.sample(&mut rng)).collect(), None))
            }
        }
    }

    /// Embedding only, for callers that never backpropagate.
    pub fn embed(&self, key: &str, text: &str) -> Result<Vec<f64>> {
        Ok(self.encode_node(key, text)?.0)
    }
}

/// Fresh trainable encoder, table entries drawn from N(0, 0.02).
pub fn init_encoder(dim: usize, bucket_count: usize, seed: u64) -> Encoder {
    let mut rng = StreamKey::new(seed).with_str("encoder-init").rng();
    let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
    let rows: Vec<f64> = (0..dim * bucket_count)
        .map(|_| normal.sample(&mut rng))
        .collect();
    Encoder::HashMean(EmbeddingTable {
        dim,
        bucket_count,
        rows,
    })
}

/// Parse a precomputed table: first line `dim=<d>`, then one row per line,
/// `id<TAB>v1 v2 ... vd`.
pub fn load_precomputed(path: impl AsRef<Path>) -> Result<Encoder> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::malformed(&shown, 1, "empty file"))?;
    let header = header.map_err(|e| Error::io(&shown, e))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::malformed(&shown, 1, "expected `dim=<positive integer>`"))?;

    let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(&shown, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::malformed(&shown, lineno, "expected id<TAB>values"))?;
        let vec: Vec<f64> = values
            .split(' ')
            .filter(|v| !v.is_empty())
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::malformed(&shown, lineno, format!("bad value: {e}")))?;
        if vec.len() != dim {
            return Err(Error::malformed(
                &shown,
                lineno,
                format!("row has {} values, header says {dim}", vec.len()),
            ));
        }
        if rows.insert(id.to_string(), vec).is_some() {
            return Err(Error::DuplicateId {
                path: shown,
                line: lineno,
                id: id.to_string(),
            });
        }
    }
    Ok(Encoder::Precomputed(PrecomputedTable { dim, rows }))
}

/// Draw from N(0, stddev) into an existing rng.
pub fn gaussian_into(rng: &mut impl Rng, n: usize, stddev: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, stddev).expect("valid stddev");
    (0..n).map(|_| normal.sample(rng)).collect()
}
