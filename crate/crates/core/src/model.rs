//! Model container and checkpoint persistence.
//!
//! Checkpoint layout: one magic line, one JSON metadata line, one blank
//! line, then raw little-endian f64 blobs — encoder table first, then the
//! attention matrices layer by layer (phrase, patent-retrieval,
//! patent-citation heads; q, k, v, s within each head). Floats in the
//! binary section round-trip bit-identically; validation metrics live in
//! the JSON line and are absent when not yet measured.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTable, Encoder, PrecomputedTable};
use crate::gnn::GnnParams;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "phrasim-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub gnn: GnnParams,
}

impl Model {
    pub fn new(encoder: Encoder, gnn: GnnParams) -> Result<Model> {
        if encoder.dim() != gnn.dim() {
            return Err(Error::DimMismatch { expected: gnn.dim(), got: encoder.dim() });
        }
        Ok(Model { encoder, gnn })
    }

    pub fn dim(&self) -> usize {
        self.gnn.dim()
    }
}

/// A model plus where training left it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub val_pearson: Option<f64>,
    pub val_spearman: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dim: usize,
    layers: usize,
    heads: usize,
    encoder: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    bucket_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    row_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    rf_seed: Option<u64>,
    step: u64,
    val_pearson: Option<f64>,
    val_spearman: Option<f64>,
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_line(r: &mut impl Read, path: &str) -> Result<String> {
    let mut bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {
                if byte[0] == b'\n' {
                    break;
                }
                bytes.push(byte[0]);
            }
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    String::from_utf8(bytes).map_err(|_| Error::malformed(path, 0, "header is not utf-8"))
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(&shown, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(&shown, e))?;
        w.flush().map_err(|e| Error::io(&shown, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let gnn = &self.model.gnn;
        let meta = Meta {
            dim: gnn.dim(),
            layers: gnn.layer_count(),
            heads: 1,
            encoder: match &self.model.encoder {
                Encoder::HashMean(_) => "hash_mean".into(),
                Encoder::Precomputed(_) => "precomputed".into(),
                Encoder::RandomFrozen { .. } => "random_frozen".into(),
            },
            bucket_count: self.model.encoder.hash_table().map(EmbeddingTable::bucket_count),
            row_count: match &self.model.encoder {
                Encoder::Precomputed(t) => Some(t.rows().len()),
                _ => None,
            },
            rf_seed: match &self.model.encoder {
                Encoder::RandomFrozen { seed, .. } => Some(*seed),
                _ => None,
            },
            step: self.step,
            val_pearson: self.val_pearson,
            val_spearman: self.val_spearman,
        };
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "{}", serde_json::to_string(&meta).expect("meta serializes"))?;
        writeln!(w)?;

        match &self.model.encoder {
            Encoder::HashMean(table) => write_f64s(w, table.rows())?,
            Encoder::Precomputed(table) => {
                for (id, row) in table.rows() {
                    w.write_all(&(id.len() as u32).to_le_bytes())?;
                    w.write_all(id.as_bytes())?;
                    write_f64s(w, row)?;
                }
            }
            Encoder::RandomFrozen { .. } => {}
        }
        for layer in &gnn.layers {
            for head in layer.heads() {
                for matrix in head.matrices() {
                    write_f64s(w, matrix)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
        let mut r = BufReader::new(file);

        let magic = read_line(&mut r, &shown)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::malformed(
                &shown,
                1,
                format!("bad magic `{magic}`, expected `{CHECKPOINT_MAGIC}`"),
            ));
        }
        let meta_line = read_line(&mut r, &shown)?;
        let meta: Meta = serde_json::from_str(&meta_line)
            .map_err(|e| Error::malformed(&shown, 2, format!("bad metadata: {e}")))?;
        let blank = read_line(&mut r, &shown)?;
        if !blank.is_empty() {
            return Err(Error::malformed(&shown, 3, "expected blank separator line"));
        }
        if meta.dim == 0 || meta.heads != 1 {
            return Err(Error::malformed(&shown, 2, "unsupported geometry"));
        }

        let io = |e| Error::io(&shown, e);
        let encoder = match meta.encoder.as_str() {
            "hash_mean" => {
                let buckets = meta
                    .bucket_count
                    .ok_or_else(|| Error::malformed(&shown, 2, "missing bucket_count"))?;
                let rows = read_f64s(&mut r, buckets * meta.dim).map_err(io)?;
                Encoder::HashMean(EmbeddingTable::new(meta.dim, buckets, rows)?)
            }
            "precomputed" => {
                let count = meta
                    .row_count
                    .ok_or_else(|| Error::malformed(&shown, 2, "missing row_count"))?;
                let mut rows = BTreeMap::new();
                for _ in 0..count {
                    let mut len_bytes = [0u8; 4];
                    r.read_exact(&mut len_bytes).map_err(io)?;
                    let mut id_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
                    r.read_exact(&mut id_bytes).map_err(io)?;
                    let id = String::from_utf8(id_bytes)
                        .map_err(|_| Error::malformed(&shown, 0, "row id is not utf-8"))?;
                    let row = read_f64s(&mut r, meta.dim).map_err(io)?;
                    rows.insert(id, row);
                }
                Encoder::Precomputed(PrecomputedTable::new(meta.dim, rows)?)
            }
            "random_frozen" => Encoder::RandomFrozen {
                dim: meta.dim,
                seed: meta
                    .rf_seed
                    .ok_or_else(|| Error::malformed(&shown, 2, "missing rf_seed"))?,
            },
            other => {
                return Err(Error::malformed(&shown, 2, format!("unknown encoder `{other}`")))
            }
        };

        let mut gnn = GnnParams::zeros(meta.dim, meta.layers);
        for layer in &mut gnn.layers {
            for head in layer.heads_mut() {
                for matrix in head.matrices_mut() {
                    *matrix = read_f64s(&mut r, meta.dim * meta.dim).map_err(io)?;
                }
            }
        }
        let mut rest = [0u8; 1];
        match r.read(&mut rest) {
            Ok(0) => {}
            Ok(_) => return Err(Error::malformed(&shown, 0, "trailing bytes after parameters")),
            Err(e) => return Err(Error::io(&shown, e)),
        }

        Ok(Checkpoint {
            model: Model::new(encoder, gnn)?,
            step: meta.step,
            val_pearson: meta.val_pearson,
            val_spearman: meta.val_spearman,
        })
    }
}
