//! Flat `key = value` run configuration. Unknown keys are hard errors;
//! hyperparameters are held to the documented sweep grids unless the run
//! opts out, and each pipeline stage derives a chained content hash from
//! exactly the fields it consumes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use phrasim_core::phrasegen::stopword_list_hash;
use phrasim_core::training::TrainConfig;

use crate::{CliError, Result};

pub const LEARNING_RATE_GRID: [f64; 3] = [2e-6, 2e-5, 2e-4];
pub const BATCH_SIZE_GRID: [usize; 4] = [2, 4, 6, 8];
pub const MARGIN_GRID: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
pub const K_GRID: [usize; 4] = [3, 5, 7, 50];
pub const ITERATIONS_GRID: [usize; 3] = [1, 2, 3];
pub const FANOUT_GRID: [usize; 3] = [1, 3, 5];
pub const LAYERS_GRID: [usize; 3] = [1, 2, 3];

/// One run's complete configuration: paths plus every knob of the
/// pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub pairs_train: Option<PathBuf>,
    pub pairs_val: Option<PathBuf>,
    pub pairs_test: Option<PathBuf>,

    pub top_m: usize,
    pub min_freq: u32,
    pub normalize_phrases: bool,

    pub k1: f64,
    pub b: f64,
    pub k: usize,

    pub dim: usize,
    pub bucket_count: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub alpha: f64,
    pub margin_r: f64,
    pub margin_c: f64,
    pub iterations: usize,
    pub fanout_r: usize,
    pub fanout_c: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub total_epoch_budget: usize,
    pub supervised: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        PipelineConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            out_dir: PathBuf::from("out"),
            stopwords: None,
            pairs_train: None,
            pairs_val: None,
            pairs_test: None,
            top_m: phrasim_core::phrasegen::DEFAULT_TOP_M,
            min_freq: phrasim_core::phrasegen::DEFAULT_MIN_FREQ,
            normalize_phrases: false,
            k1: phrasim_core::retrieval::DEFAULT_K1,
            b: phrasim_core::retrieval::DEFAULT_B,
            k: t.k,
            dim: t.dim,
            bucket_count: t.bucket_count,
            layers: t.layers,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            alpha: t.alpha,
            margin_r: t.margin_r,
            margin_c: t.margin_c,
            iterations: t.iterations,
            fanout_r: t.fanout_r,
            fanout_c: t.fanout_c,
            eval_every: t.eval_every,
            seed: t.seed,
            total_epoch_budget: t.total_epoch_budget,
            supervised: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        CliError::config(format!("line {line}: cannot parse {key} value {value:?}"))
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::config(format!(
            "line {line}: {key} must be true or false, got {value:?}"
        ))),
    }
}

/// Parse configuration text. Relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    let mut seen: Vec<String> = Vec::new();
    let resolve = |value: &str| -> PathBuf {
        let p = PathBuf::from(value);
        match (p.is_relative(), base) {
            (true, Some(dir)) => dir.join(p),
            _ => p,
        }
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {line_no}: expected `key = value`")))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(CliError::config(format!("line {line_no}: empty value for {key}")));
        }
        if seen.iter().any(|s| s == key) {
            return Err(CliError::config(format!("line {line_no}: duplicate key {key}")));
        }
        seen.push(key.to_string());

        match key {
            "corpus" => cfg.corpus = resolve(value),
            "out_dir" => cfg.out_dir = resolve(value),
            "stopwords" => cfg.stopwords = Some(resolve(value)),
            "pairs_train" => cfg.pairs_train = Some(resolve(value)),
            "pairs_val" => cfg.pairs_val = Some(resolve(value)),
            "pairs_test" => cfg.pairs_test = Some(resolve(value)),
            "top_m" => cfg.top_m = parse_value(key, value, line_no)?,
            "min_freq" => cfg.min_freq = parse_value(key, value, line_no)?,
            "normalize_phrases" => cfg.normalize_phrases = parse_bool(key, value, line_no)?,
            "k1" => cfg.k1 = parse_value(key, value, line_no)?,
            "b" => cfg.b = parse_value(key, value, line_no)?,
            "k" => cfg.k = parse_value(key, value, line_no)?,
            "dim" => cfg.dim = parse_value(key, value, line_no)?,
            "bucket_count" => cfg.bucket_count = parse_value(key, value, line_no)?,
            "layers" => cfg.layers = parse_value(key, value, line_no)?,
            "learning_rate" => cfg.learning_rate = parse_value(key, value, line_no)?,
            "batch_size" => cfg.batch_size = parse_value(key, value, line_no)?,
            "max_epochs" => cfg.max_epochs = parse_value(key, value, line_no)?,
            "alpha" => cfg.alpha = parse_value(key, value, line_no)?,
            "margin_r" => cfg.margin_r = parse_value(key, value, line_no)?,
            "margin_c" => cfg.margin_c = parse_value(key, value, line_no)?,
            "iterations" => cfg.iterations = parse_value(key, value, line_no)?,
            "fanout_r" => cfg.fanout_r = parse_value(key, value, line_no)?,
            "fanout_c" => cfg.fanout_c = parse_value(key, value, line_no)?,
            "eval_every" => cfg.eval_every = parse_value(key, value, line_no)?,
            "seed" => cfg.seed = parse_value(key, value, line_no)?,
            "total_epoch_budget" => cfg.total_epoch_budget = parse_value(key, value, line_no)?,
            "supervised" => cfg.supervised = parse_bool(key, value, line_no)?,
            _ => {
                return Err(CliError::config(format!("line {line_no}: unknown key {key:?}")));
            }
        }
    }
    Ok(cfg)
}

/// Read and parse a config file; relative paths inside it resolve against
/// its parent directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty());
    parse_config_str(&text, base)
}

fn on_grid_f(value: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| *g == value)
}

fn on_grid_u(value: usize, grid: &[usize]) -> bool {
    grid.contains(&value)
}

impl PipelineConfig {
    /// Range and grid checks. Grid misses are errors unless
    /// `allow_offgrid`; the alpha range and structural constraints are
    /// hard errors regardless.
    pub fn validate(&self, allow_offgrid: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(CliError::config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.top_m == 0 {
            return Err(CliError::config("top_m must be at least 1"));
        }
        if !(self.k1 > 0.0) || !self.k1.is_finite() {
            return Err(CliError::config(format!("k1 must be positive, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(CliError::config(format!("b must be in [0, 1], got {}", self.b)));
        }
        if self.supervised && self.pairs_train.is_none() {
            return Err(CliError::config("supervised = true requires pairs_train"));
        }

        if !allow_offgrid {
            let mut misses: Vec<String> = Vec::new();
            if !on_grid_f(self.learning_rate, &LEARNING_RATE_GRID) {
                misses.push(format!("learning_rate={} (grid {LEARNING_RATE_GRID:?})", self.learning_rate));
            }
            if !on_grid_u(self.batch_size, &BATCH_SIZE_GRID) {
                misses.push(format!("batch_size={} (grid {BATCH_SIZE_GRID:?})", self.batch_size));
            }
            if !on_grid_f(self.margin_r, &MARGIN_GRID) {
                misses.push(format!("margin_r={} (grid {MARGIN_GRID:?})", self.margin_r));
            }
            if !on_grid_f(self.margin_c, &MARGIN_GRID) {
                misses.push(format!("margin_c={} (grid {MARGIN_GRID:?})", self.margin_c));
            }
            if !on_grid_u(self.k, &K_GRID) {
                misses.push(format!("k={} (grid {K_GRID:?})", self.k));
            }
            if !on_grid_u(self.iterations, &ITERATIONS_GRID) {
                misses.push(format!("iterations={} (grid {ITERATIONS_GRID:?})", self.iterations));
            }
            if !on_grid_u(self.fanout_r, &FANOUT_GRID) {
                misses.push(format!("fanout_r={} (grid {FANOUT_GRID:?})", self.fanout_r));
            }
            if !on_grid_u(self.fanout_c, &FANOUT_GRID) {
                misses.push(format!("fanout_c={} (grid {FANOUT_GRID:?})", self.fanout_c));
            }
            if !on_grid_u(self.layers, &LAYERS_GRID) {
                misses.push(format!("layers={} (grid {LAYERS_GRID:?})", self.layers));
            }
            if !misses.is_empty() {
                return Err(CliError::config(format!(
                    "values outside the sweep grids (pass --allow-offgrid to accept): {}",
                    misses.join(", ")
                )));
            }
        }

        self.train_config()
            .validate()
            .map_err(|e| CliError::config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            bucket_count: self.bucket_count,
            layers: self.layers,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            alpha: self.alpha,
            margin_r: self.margin_r,
            margin_c: self.margin_c,
            k: self.k,
            iterations: self.iterations,
            fanout_r: self.fanout_r,
            fanout_c: self.fanout_c,
            eval_every: self.eval_every,
            seed: self.seed,
            total_epoch_budget: self.total_epoch_budget,
        }
    }

    /// Canonical flat listing of the effective values, printable and
    /// parseable back into the same config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let path = |p: &PathBuf| p.display().to_string();
        let _ = writeln!(out, "corpus = {}", path(&self.corpus));
        let _ = writeln!(out, "out_dir = {}", path(&self.out_dir));
        if let Some(p) = &self.stopwords {
            let _ = writeln!(out, "stopwords = {}", path(p));
        }
        if let Some(p) = &self.pairs_train {
            let _ = writeln!(out, "pairs_train = {}", path(p));
        }
        if let Some(p) = &self.pairs_val {
            let _ = writeln!(out, "pairs_val = {}", path(p));
        }
        if let Some(p) = &self.pairs_test {
            let _ = writeln!(out, "pairs_test = {}", path(p));
        }
        let _ = writeln!(out, "top_m = {}", self.top_m);
        let _ = writeln!(out, "min_freq = {}", self.min_freq);
        let _ = writeln!(out, "normalize_phrases = {}", self.normalize_phrases);
        let _ = writeln!(out, "k1 = {:?}", self.k1);
        let _ = writeln!(out, "b = {:?}", self.b);
        let _ = writeln!(out, "k = {}", self.k);
        let _ = writeln!(out, "dim = {}", self.dim);
        let _ = writeln!(out, "bucket_count = {}", self.bucket_count);
        let _ = writeln!(out, "layers = {}", self.layers);
        let _ = writeln!(out, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(out, "alpha = {:?}", self.alpha);
        let _ = writeln!(out, "margin_r = {:?}", self.margin_r);
        let _ = writeln!(out, "margin_c = {:?}", self.margin_c);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "fanout_r = {}", self.fanout_r);
        let _ = writeln!(out, "fanout_c = {}", self.fanout_c);
        let _ = writeln!(out, "eval_every = {}", self.eval_every);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "total_epoch_budget = {}", self.total_epoch_budget);
        let _ = writeln!(out, "supervised = {}", self.supervised);
        out
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Phrases,
    Index,
    Universe,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Ingest, Stage::Phrases, Stage::Index, Stage::Universe, Stage::Train, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Phrases => "phrases",
            Stage::Index => "index",
            Stage::Universe => "universe",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    fn parent(self) -> Option<Stage> {
        match self {
            Stage::Ingest => None,
            Stage::Phrases => Some(Stage::Ingest),
            Stage::Index => Some(Stage::Phrases),
            Stage::Universe => Some(Stage::Index),
            Stage::Train => Some(Stage::Universe),
            Stage::Eval => Some(Stage::Train),
        }
    }
}

/// Fields a stage consumes, in canonical `key = value` lines. The
/// stopword list is identified by the builtin list's content hash or the
/// configured path.
fn stage_fields(cfg: &PipelineConfig, stage: Stage) -> String {
    let opt_path = |p: &Option<PathBuf>| {
        p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into())
    };
    match stage {
        Stage::Ingest => format!("corpus = {}\n", cfg.corpus.display()),
        Stage::Phrases => {
            let stopword_id = match &cfg.stopwords {
                Some(p) => format!("file:{}", p.display()),
                None => format!("builtin:{}", stopword_list_hash()),
            };
            format!(
                "top_m = {}\nmin_freq = {}\nnormalize_phrases = {}\nstopwords = {}\n",
                cfg.top_m, cfg.min_freq, cfg.normalize_phrases, stopword_id
            )
        }
        Stage::Index => format!("k1 = {:?}\nb = {:?}\n", cfg.k1, cfg.b),
        Stage::Universe => format!("k = {}\n", cfg.k),
        Stage::Train => format!(
            "dim = {}\nbucket_count = {}\nlayers = {}\nlearning_rate = {:?}\nbatch_size = {}\n\
             max_epochs = {}\nalpha = {:?}\nmargin_r = {:?}\nmargin_c = {:?}\niterations = {}\n\
             fanout_r = {}\nfanout_c = {}\neval_every = {}\nseed = {}\ntotal_epoch_budget = {}\n\
             supervised = {}\npairs_train = {}\npairs_val = {}\n",
            cfg.dim,
            cfg.bucket_count,
            cfg.layers,
            cfg.learning_rate,
            cfg.batch_size,
            cfg.max_epochs,
            cfg.alpha,
            cfg.margin_r,
            cfg.margin_c,
            cfg.iterations,
            cfg.fanout_r,
            cfg.fanout_c,
            cfg.eval_every,
            cfg.seed,
            cfg.total_epoch_budget,
            cfg.supervised,
            opt_path(&cfg.pairs_train),
            opt_path(&cfg.pairs_val),
        ),
        Stage::Eval => format!("pairs_test = {}\n", opt_path(&cfg.pairs_test)),
    }
}

/// Chained content hash: a stage's hash covers its own fields plus its
/// parent's hash, so changing any upstream knob invalidates everything
/// downstream.
pub fn stage_hash(cfg: &PipelineConfig, stage: Stage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(stage.name().as_bytes());
    hasher.update([0u8]);
    if let Some(parent) = stage.parent() {
        hasher.update(stage_hash(cfg, parent).as_bytes());
        hasher.update([0u8]);
    }
    hasher.update(stage_fields(cfg, stage).as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}
