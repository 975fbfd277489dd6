//! `phrasim`: retrieval-augmented phrase similarity over patent abstracts.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use phrasim_cli::config::{load_config, PipelineConfig, Stage};
use phrasim_cli::pipeline::{
    self, artifacts, load_checkpoint, load_index_artifact, load_pairs, load_state, run_pipeline,
    run_stage,
};
use phrasim_cli::{CliError, Result};
use phrasim_core::encoder::init_encoder;
use phrasim_core::eval::{
    evaluate, evaluate_retrieve_avg, fit_retrieve_avg_weight, graph_only_baseline, mean_report,
    query_neighbors, EvalReport,
};
use phrasim_core::universe::{sample_ego_for_text, EgoNode};

#[derive(Parser)]
#[command(name = "phrasim", version, about = "Retrieval-augmented phrase similarity")]
struct Cli {
    /// Run configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Chattier logging.
    #[arg(long, global = true)]
    verbose: bool,
    /// Accept hyperparameters outside the sweep grids.
    #[arg(long, global = true)]
    allow_offgrid: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the raw corpus, dropping dangling and self citations.
    Ingest,
    /// Extract the phrase vocabulary from the normalized corpus.
    Phrases {
        /// Keep the top-m candidates per document.
        #[arg(long)]
        top_m: Option<usize>,
        /// Minimum document frequency for a phrase to enter the vocabulary.
        #[arg(long)]
        min_freq: Option<u32>,
        /// Apply light plural stripping to phrase tokens.
        #[arg(long)]
        normalize: bool,
        /// Stopword list file (one word per line) instead of the builtin.
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// BM25 index over patent abstracts.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Phrase-patent universe graph.
    Universe {
        #[command(subcommand)]
        action: UniverseAction,
    },
    /// Self-supervised triplet training.
    Train,
    /// Supervised warmup plus joint training on labeled pairs.
    TrainSupervised {
        /// Labeled training pairs (phrase1,phrase2,score CSV).
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Score a checkpoint against labeled pairs.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled pairs to score.
        #[arg(long)]
        pairs: PathBuf,
        /// Comma-separated sampling seeds; reports per-seed and mean metrics.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Nearest vocabulary phrases to a query phrase.
    Query {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        phrase: String,
        /// How many neighbors to print.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Reference baselines.
    Baseline {
        #[command(subcommand)]
        action: BaselineAction,
    },
    /// Run every stage in order, skipping fresh artifacts.
    Pipeline,
}

#[derive(Subcommand)]
enum IndexAction {
    /// Build the index from the normalized corpus.
    Build,
    /// Retrieve the top-k documents for a phrase.
    Query {
        #[arg(long)]
        phrase: String,
        #[arg(long)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum UniverseAction {
    /// Build the universe graph from phrases, index, and citations.
    Build {
        /// Retrieval edges per phrase.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Sample one ego graph and print it in dot format.
    Ego {
        #[arg(long)]
        phrase: String,
        /// Sampling iterations (defaults to the configured value).
        #[arg(long)]
        iters: Option<usize>,
        /// Fanout applied to both relations (defaults to the configured values).
        #[arg(long)]
        fanout: Option<usize>,
    },
}

#[derive(Subcommand)]
enum BaselineAction {
    /// Tune the retrieval-averaging weight on validation pairs, score on test.
    Retrieveavg {
        /// Validation pairs for weight fitting.
        #[arg(long)]
        pairs: PathBuf,
        /// Test pairs to score.
        #[arg(long)]
        test: PathBuf,
    },
    /// Train with a random frozen encoder so only the graph layers learn.
    Graphonly,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                err.exit();
            }
            let _ = err.print();
            std::process::exit(1);
        }
    };
    let filter = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(filter)).init();

    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match cli.command {
        Command::Ingest => {
            cfg.validate(cli.allow_offgrid)?;
            report_stage(run_stage(&cfg, Stage::Ingest)?);
        }
        Command::Phrases { top_m, min_freq, normalize, stopwords } => {
            if let Some(m) = top_m {
                cfg.top_m = m;
            }
            if let Some(f) = min_freq {
                cfg.min_freq = f;
            }
            if normalize {
                cfg.normalize_phrases = true;
            }
            if let Some(path) = stopwords {
                cfg.stopwords = Some(path);
            }
            cfg.validate(cli.allow_offgrid)?;
            report_stage(run_stage(&cfg, Stage::Phrases)?);
        }
        Command::Index { action } => match action {
            IndexAction::Build => {
                cfg.validate(cli.allow_offgrid)?;
                report_stage(run_stage(&cfg, Stage::Index)?);
            }
            IndexAction::Query { phrase, k } => {
                cfg.validate(cli.allow_offgrid)?;
                let index = load_index_artifact(&cfg)?;
                let hits = index.retrieve_topk_scored(&phrase, k);
                if hits.is_empty() {
                    println!("no documents match");
                }
                for (id, score) in hits {
                    println!("{id}\t{score:.6}");
                }
            }
        },
        Command::Universe { action } => match action {
            UniverseAction::Build { k } => {
                if let Some(k) = k {
                    cfg.k = k;
                }
                cfg.validate(cli.allow_offgrid)?;
                report_stage(run_stage(&cfg, Stage::Universe)?);
            }
            UniverseAction::Ego { phrase, iters, fanout } => {
                cfg.validate(cli.allow_offgrid)?;
                let state = load_state(&cfg)?;
                let mut params = cfg.train_config().sample_params();
                if let Some(n) = iters {
                    params.iterations = n;
                }
                if let Some(f) = fanout {
                    params.fanout_r = f;
                    params.fanout_c = f;
                }
                let ego =
                    sample_ego_for_text(&state.universe, &state.index, &phrase, cfg.k, params, cfg.seed)?;
                let (phrases, patents, virtuals) =
                    ego.nodes().iter().fold((0, 0, 0), |(ph, pa, vi), n| match n {
                        EgoNode::Phrase(_) => (ph + 1, pa, vi),
                        EgoNode::Patent(_) => (ph, pa + 1, vi),
                        EgoNode::Virtual => (ph, pa, vi + 1),
                    });
                println!(
                    "{} nodes ({phrases} phrases, {patents} patents, {virtuals} virtual), \
                     {} retrieval edges, {} citation edges",
                    ego.node_count(),
                    ego.retrieval_edges().len(),
                    ego.citation_edges().len()
                );
                print!("{}", ego.to_dot(&state));
            }
        },
        Command::Train => {
            cfg.validate(cli.allow_offgrid)?;
            report_stage(run_stage(&cfg, Stage::Train)?);
        }
        Command::TrainSupervised { pairs } => {
            cfg.supervised = true;
            cfg.pairs_train = Some(pairs);
            cfg.validate(cli.allow_offgrid)?;
            report_stage(run_stage(&cfg, Stage::Train)?);
        }
        Command::Eval { checkpoint, pairs, seeds } => {
            cfg.validate(cli.allow_offgrid)?;
            let state = load_state(&cfg)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let pair_list = load_pairs(&pairs)?;
            let seeds = seeds.unwrap_or_else(|| vec![cfg.seed]);
            let sample = cfg.train_config().sample_params();
            let mut reports = Vec::new();
            for &seed in &seeds {
                let report = evaluate(&state, &ckpt.model, &pair_list, cfg.k, sample, seed)?;
                reports.push(report);
            }
            print_eval_table(&seeds, &reports);
        }
        Command::Query { checkpoint, phrase, top } => {
            cfg.validate(cli.allow_offgrid)?;
            let state = load_state(&cfg)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let candidates: Vec<String> = (0..state.universe.phrase_count())
                .map(|i| state.universe.phrase_text(i as u32).to_string())
                .collect();
            let sample = cfg.train_config().sample_params();
            let neighbors = query_neighbors(
                &state,
                &ckpt.model,
                &phrase,
                &candidates,
                top,
                cfg.k,
                sample,
                cfg.seed,
            )?;
            println!("neighbors of {phrase:?}:");
            for (rank, (text, sim)) in neighbors.iter().enumerate() {
                println!("{:>3}. {sim:+.4}  {text}", rank + 1);
            }
        }
        Command::Baseline { action } => match action {
            BaselineAction::Retrieveavg { pairs, test } => {
                cfg.validate(cli.allow_offgrid)?;
                let state = load_state(&cfg)?;
                let val_pairs = load_pairs(&pairs)?;
                let test_pairs = load_pairs(&test)?;
                let encoder = init_encoder(cfg.dim, cfg.bucket_count, cfg.seed);
                let (w, val_sp) = fit_retrieve_avg_weight(&state, &encoder, &val_pairs)?;
                let report = evaluate_retrieve_avg(&state, &encoder, w, &test_pairs)?;
                println!("retrieve-avg weight w = {w:.1} (val spearman {val_sp:.4})");
                print_eval_table(&[cfg.seed], &[report]);
            }
            BaselineAction::Graphonly => {
                cfg.validate(cli.allow_offgrid)?;
                let state = load_state(&cfg)?;
                let test_path = cfg.pairs_test.clone().ok_or_else(|| {
                    CliError::config("baseline graphonly needs pairs_test in the config")
                })?;
                let val_pairs = match &cfg.pairs_val {
                    Some(p) => Some(load_pairs(p)?),
                    None => None,
                };
                let test_pairs = load_pairs(&test_path)?;
                let outcome = graph_only_baseline(&state, &cfg.train_config(), val_pairs.as_deref())?;
                let sample = cfg.train_config().sample_params();
                let report =
                    evaluate(&state, &outcome.best.model, &test_pairs, cfg.k, sample, cfg.seed)?;
                println!("graph-only baseline (random frozen encoder):");
                print_eval_table(&[cfg.seed], &[report]);
            }
        },
        Command::Pipeline => {
            cfg.validate(cli.allow_offgrid)?;
            for outcome in run_pipeline(&cfg)? {
                report_stage(outcome);
            }
            let art = artifacts(&cfg.out_dir);
            if art.report.exists() {
                println!("report: {}", art.report.display());
            }
        }
    }
    Ok(())
}

fn report_stage(outcome: pipeline::StageOutcome) {
    println!("{outcome}");
}

/// Text table plus a JSON blob, per seed and (for several seeds) the mean.
fn print_eval_table(seeds: &[u64], reports: &[EvalReport]) {
    println!(
        "{:<8} {:>9} {:>9} {:>10} {:>11} {:>6}",
        "seed", "pearson", "spearman", "alignment", "uniformity", "pairs"
    );
    for (seed, r) in seeds.iter().zip(reports) {
        println!(
            "{:<8} {:>9.4} {:>9.4} {:>10.4} {:>11.4} {:>6}",
            seed, r.pearson, r.spearman, r.alignment_loss, r.uniformity_loss, r.pair_count
        );
    }
    let mean = mean_report(reports);
    if reports.len() > 1 {
        println!(
            "{:<8} {:>9.4} {:>9.4} {:>10.4} {:>11.4} {:>6}",
            "mean", mean.pearson, mean.spearman, mean.alignment_loss, mean.uniformity_loss, mean.pair_count
        );
    }
    let per_seed: Vec<serde_json::Value> = seeds
        .iter()
        .zip(reports)
        .map(|(seed, r)| {
            let mut value = serde_json::to_value(r).expect("report serializes");
            value["seed"] = serde_json::json!(seed);
            value
        })
        .collect();
    let blob = serde_json::json!({ "per_seed": per_seed, "mean": mean });
    println!("{}", serde_json::to_string_pretty(&blob).expect("json serializes"));
}
