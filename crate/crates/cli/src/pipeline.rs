//! Stage orchestration over on-disk artifacts. Every stage writes its
//! output files plus a `.meta` sidecar carrying the chained config hash;
//! a stage re-runs only when its hash no longer matches.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use phrasim_core::corpus::{ingest_corpus, write_corpus, Corpus};
use phrasim_core::encoder::init_encoder;
use phrasim_core::eval::{evaluate, read_pairs, EvalReport, PhrasePair};
use phrasim_core::gnn::GnnParams;
use phrasim_core::model::{Checkpoint, Model};
use phrasim_core::phrasegen::{build_phrase_set, default_stopwords, load_stopwords, PhraseSet};
use phrasim_core::retrieval::{build_index, InvertedIndex};
use phrasim_core::training::{train, train_supervised, TrainOutcome};
use phrasim_core::universe::{build_universe, read_universe, write_universe, PipelineState, Universe};

use crate::config::{stage_hash, PipelineConfig, Stage};
use crate::{CliError, Result};

/// Fixed artifact layout inside the configured output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub corpus: PathBuf,
    pub phrases: PathBuf,
    pub index: PathBuf,
    pub universe_base: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub report: PathBuf,
}

pub fn artifacts(out_dir: &Path) -> Artifacts {
    Artifacts {
        corpus: out_dir.join("corpus_normalized.jsonl"),
        phrases: out_dir.join("phrases.tsv"),
        index: out_dir.join("index.json"),
        universe_base: out_dir.join("universe"),
        checkpoint: out_dir.join("checkpoint.bin"),
        train_log: out_dir.join("train_log.jsonl"),
        report: out_dir.join("report.json"),
    }
}

fn meta_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta");
    artifact.with_file_name(name)
}

#[derive(Debug, Serialize, Deserialize)]
struct StageMeta {
    stage: String,
    hash: String,
}

fn write_meta(artifact: &Path, stage: Stage, hash: &str) -> Result<()> {
    let meta = StageMeta { stage: stage.name().to_string(), hash: hash.to_string() };
    let text = serde_json::to_string(&meta).expect("meta serializes");
    fs::write(meta_path(artifact), text + "\n").map_err(|e| CliError::io(meta_path(artifact), e))
}

fn meta_matches(artifact: &Path, hash: &str) -> bool {
    let Ok(text) = fs::read_to_string(meta_path(artifact)) else {
        return false;
    };
    serde_json::from_str::<StageMeta>(&text).is_ok_and(|m| m.hash == hash)
}

/// What one stage did when asked to run.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub ran: bool,
    pub detail: String,
}

impl std::fmt::Display for StageOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verb = if self.ran { "ran" } else { "skipped" };
        write!(f, "stage {}: {} ({})", self.stage, verb, self.detail)
    }
}

/// Files whose presence (plus a matching meta hash) marks a stage as done.
fn stage_files(art: &Artifacts, stage: Stage) -> Vec<PathBuf> {
    match stage {
        Stage::Ingest => vec![art.corpus.clone()],
        Stage::Phrases => vec![art.phrases.clone()],
        Stage::Index => vec![art.index.clone()],
        Stage::Universe => {
            let (a, b, c) = phrasim_core::universe::universe_paths(&art.universe_base);
            vec![a, b, c]
        }
        Stage::Train => vec![art.checkpoint.clone(), art.train_log.clone()],
        Stage::Eval => vec![art.report.clone()],
    }
}

/// The artifact whose sidecar records the stage hash.
fn stage_meta_anchor(art: &Artifacts, stage: Stage) -> PathBuf {
    match stage {
        Stage::Ingest => art.corpus.clone(),
        Stage::Phrases => art.phrases.clone(),
        Stage::Index => art.index.clone(),
        Stage::Universe => art.universe_base.clone(),
        Stage::Train => art.checkpoint.clone(),
        Stage::Eval => art.report.clone(),
    }
}

/// Run one stage, skipping when its artifacts are fresh. Errors carry the
/// stage name.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageOutcome> {
    if stage == Stage::Eval && cfg.pairs_test.is_none() {
        return Ok(StageOutcome {
            stage: stage.name(),
            ran: false,
            detail: "no pairs_test configured".into(),
        });
    }

    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    let art = artifacts(&cfg.out_dir);
    let hash = stage_hash(cfg, stage);
    let anchor = stage_meta_anchor(&art, stage);
    if stage_files(&art, stage).iter().all(|p| p.exists()) && meta_matches(&anchor, &hash) {
        return Ok(StageOutcome { stage: stage.name(), ran: false, detail: "hash match".into() });
    }

    let detail = execute(cfg, &art, stage).map_err(|e| e.in_stage(stage.name()))?;
    write_meta(&anchor, stage, &hash)?;
    Ok(StageOutcome { stage: stage.name(), ran: true, detail })
}

/// The whole pipeline in order, each stage printing whether it ran.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<StageOutcome>> {
    Stage::ALL.iter().map(|stage| run_stage(cfg, *stage)).collect()
}

fn execute(cfg: &PipelineConfig, art: &Artifacts, stage: Stage) -> Result<String> {
    match stage {
        Stage::Ingest => {
            let report = ingest_corpus(&cfg.corpus)?;
            write_corpus(&report.corpus, &art.corpus)?;
            Ok(format!(
                "{} docs, {} citations, {} dangling and {} self citations dropped",
                report.corpus.len(),
                report.corpus.citation_count(),
                report.dangling_dropped,
                report.self_citations_dropped
            ))
        }
        Stage::Phrases => {
            let corpus = load_corpus_artifact(cfg)?;
            let stopwords = load_stopword_set(cfg)?;
            let phrases =
                build_phrase_set(&corpus, &stopwords, cfg.top_m, cfg.min_freq, cfg.normalize_phrases);
            if phrases.is_empty() {
                log::warn!("phrase set is empty at min_freq {}", cfg.min_freq);
            }
            phrases.write(&art.phrases)?;
            Ok(format!("{} phrases", phrases.len()))
        }
        Stage::Index => {
            let corpus = load_corpus_artifact(cfg)?;
            let index = build_index(&corpus, cfg.k1, cfg.b)?;
            index.write(&art.index)?;
            Ok(format!("{} docs, avg length {:.2}", index.doc_count(), index.avg_doc_len()))
        }
        Stage::Universe => {
            let corpus = load_corpus_artifact(cfg)?;
            let phrases = load_phrases_artifact(cfg)?;
            let index = load_index_artifact(cfg)?;
            let universe = build_universe(&corpus, &phrases, &index, cfg.k)?;
            write_universe(&universe, &art.universe_base)?;
            Ok(format!(
                "{} phrases, {} patents, {} retrieval edges, {} citation edges, {} isolated",
                universe.phrase_count(),
                universe.patent_count(),
                universe.retrieval_edge_count(),
                universe.citation_edge_count(),
                universe.isolated_phrase_count()
            ))
        }
        Stage::Train => {
            let state = load_state(cfg)?;
            let outcome = train_model(cfg, &state)?;
            outcome.best.save(&art.checkpoint)?;
            write_train_log(&art.train_log, &outcome)?;
            let best_sp = outcome
                .best
                .val_spearman
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into());
            Ok(format!(
                "{} steps, best checkpoint at step {} (val spearman {})",
                outcome.log.len(),
                outcome.best.step,
                best_sp
            ))
        }
        Stage::Eval => {
            let pairs_path = cfg.pairs_test.as_ref().expect("checked by run_stage");
            let state = load_state(cfg)?;
            let checkpoint = load_checkpoint(&art.checkpoint)?;
            let pairs = load_pairs(pairs_path)?;
            let report = evaluate(
                &state,
                &checkpoint.model,
                &pairs,
                cfg.k,
                cfg.train_config().sample_params(),
                cfg.seed,
            )?;
            write_report(&art.report, &report)?;
            Ok(format!(
                "{} pairs, pearson {:.4}, spearman {:.4}",
                report.pair_count, report.pearson, report.spearman
            ))
        }
    }
}

/// Train per the config: the labeled schedule when `supervised`, the
/// triplet objective otherwise.
pub fn train_model(cfg: &PipelineConfig, state: &PipelineState) -> Result<TrainOutcome> {
    let tc = cfg.train_config();
    let val = match &cfg.pairs_val {
        Some(p) => Some(load_pairs(p)?),
        None => None,
    };
    let model = Model::new(
        init_encoder(cfg.dim, cfg.bucket_count, cfg.seed),
        GnnParams::init(cfg.dim, cfg.layers, cfg.seed),
    )?;
    let outcome = if cfg.supervised {
        let pairs_path = cfg
            .pairs_train
            .as_ref()
            .ok_or_else(|| CliError::config("supervised training requires pairs_train"))?;
        let train_pairs = load_pairs(pairs_path)?;
        train_supervised(state, model, &tc, &train_pairs, val.as_deref())?
    } else {
        train(state, model, &tc, val.as_deref())?
    };
    Ok(outcome)
}

fn write_train_log(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    for row in &outcome.log {
        let line = serde_json::to_string(row).expect("log row serializes");
        writeln!(file, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Reports are byte-stable: serde emits floats deterministically and the
/// struct carries no timestamps or paths.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::data(format!(
            "{} not found; run `phrasim {produced_by}` first",
            path.display()
        )))
    }
}

pub fn load_corpus_artifact(cfg: &PipelineConfig) -> Result<Corpus> {
    let art = artifacts(&cfg.out_dir);
    require(&art.corpus, "ingest")?;
    Ok(ingest_corpus(&art.corpus)?.corpus)
}

pub fn load_phrases_artifact(cfg: &PipelineConfig) -> Result<PhraseSet> {
    let art = artifacts(&cfg.out_dir);
    require(&art.phrases, "phrases")?;
    Ok(PhraseSet::read(&art.phrases)?)
}

pub fn load_index_artifact(cfg: &PipelineConfig) -> Result<InvertedIndex> {
    let art = artifacts(&cfg.out_dir);
    require(&art.index, "index build")?;
    Ok(InvertedIndex::read(&art.index)?)
}

pub fn load_universe_artifact(cfg: &PipelineConfig) -> Result<Universe> {
    let art = artifacts(&cfg.out_dir);
    let (nodes, _, _) = phrasim_core::universe::universe_paths(&art.universe_base);
    require(&nodes, "universe build")?;
    Ok(read_universe(&art.universe_base)?)
}

/// Everything the encoder-side operations need, loaded from artifacts.
pub fn load_state(cfg: &PipelineConfig) -> Result<PipelineState> {
    Ok(PipelineState {
        corpus: load_corpus_artifact(cfg)?,
        phrases: load_phrases_artifact(cfg)?,
        index: load_index_artifact(cfg)?,
        universe: load_universe_artifact(cfg)?,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path, "train")?;
    Ok(Checkpoint::load(path)?)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PhrasePair>> {
    require(path, "--pairs (the file must exist)")?;
    Ok(read_pairs(path)?)
}

pub fn load_stopword_set(cfg: &PipelineConfig) -> Result<HashSet<String>> {
    match &cfg.stopwords {
        Some(path) => Ok(load_stopwords(path)?),
        None => Ok(default_stopwords().clone()),
    }
}
