use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use medrank::baseline::{save_features, BaselineFeatureConfig, BaselineModel, BaselineRanker, HingeConfig, LogRegConfig};
use medrank::config::RunConfig;
use medrank::corpus::{load_dataset, load_qa_corpus, save_qa_corpus, Dataset, Split};
use medrank::evalkit::{analyze, evaluate, load_predictions, save_predictions, write_analysis_csv, write_csv};
use medrank::io::{read_json, write_json, write_jsonl};
use medrank::joint::Checkpoint;
use medrank::pipeline::{
    extract_features, fit_baseline_features, joint_gradcheck, predict_baseline, predict_joint, train_baseline,
    train_joint, Pipeline,
};
use medrank::providers::{ProviderConfig, TfidfModel};
use medrank::retrieval::{save_cache, CacheEntry};

#[derive(Parser)]
#[command(name = "medrank", version, about = "Filter and re-rank candidate answers to medical questions")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true, env = "MEDRANK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the small test-size joint model (8-wide embeddings).
    #[arg(long, global = true)]
    scaled_down: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set retrieval.T=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RankerArg {
    Logistic,
    Hinge,
}

#[derive(clap::Args)]
struct DatasetArgs {
    /// Dataset JSONL; defaults to `data.test` (or `data.train` with `--split train`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the train/test datasets and the QA corpus and write normalized copies.
    Ingest {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fit the TF-IDF model on the QA corpus.
    FitTfidf,
    /// Retrieve entailed corpus pairs for every question and report coverage.
    BuildIndex(DatasetArgs),
    /// Baseline feature rows for a dataset.
    ExtractFeatures {
        #[command(flatten)]
        data: DatasetArgs,
        /// Reuse a feature config instead of fitting one on this dataset.
        #[arg(long)]
        feature_config: Option<PathBuf>,
        #[arg(long)]
        tfidf: Option<PathBuf>,
    },
    /// Train the logistic baseline and the pairwise hinge ranker.
    TrainBaseline {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        feature_config: PathBuf,
        #[arg(long)]
        tfidf: PathBuf,
        #[arg(long)]
        no_hinge: bool,
    },
    /// Train the joint filter and ranker.
    TrainJoint,
    /// Rank and filter a dataset with a joint checkpoint or a baseline model.
    Predict {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, conflicts_with = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "logistic")]
        ranker: RankerArg,
    },
    /// Accuracy, precision, MRR and Spearman's rho of a predictions file.
    Evaluate {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Error-analysis tables of a predictions file.
    Analyze {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Finite-difference check of the scaled-down joint model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Generate a synthetic dataset and corpus.
    Synth {
        #[arg(long)]
        questions: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::FitTfidf => "fit-tfidf",
            Command::BuildIndex(_) => "build-index",
            Command::ExtractFeatures { .. } => "extract-features",
            Command::TrainBaseline { .. } => "train-baseline",
            Command::TrainJoint => "train-joint",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Analyze { .. } => "analyze",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Synth { .. } => "synth",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if cli.scaled_down {
        cfg.scaled_down = true;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Provider settings with the embedding width the configured model expects.
fn provider_config(cfg: &RunConfig) -> ProviderConfig {
    let mut p = cfg.provider.clone();
    if cfg.scaled_down {
        p.dim = cfg.joint().encoder.in_channels;
    }
    p
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.require_path(&cfg.out, "out")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn pipeline(cfg: &RunConfig, provider: ProviderConfig) -> Result<Pipeline> {
    let corpus = load_qa_corpus(cfg.require_path(&cfg.corpus_path, "data.corpus")?)?;
    Ok(Pipeline::new(
        cfg.preprocessor()?,
        corpus,
        provider,
        cfg.retrieval,
        cfg.direction,
    )?)
}

fn dataset(cfg: &RunConfig, args: &DatasetArgs) -> Result<Dataset> {
    let split = Split::from(args.split);
    let path = match (&args.dataset, split) {
        (Some(p), _) => p.as_path(),
        (None, Split::Train) => cfg.require_path(&cfg.train_path, "data.train")?,
        (None, Split::Test) => cfg.require_path(&cfg.test_path, "data.test")?,
        (None, Split::Validation) => bail!("--dataset is required for a validation split"),
    };
    Ok(load_dataset(path, split)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    train_questions: usize,
    test_questions: usize,
    candidates: usize,
    corpus_pairs: usize,
}

#[derive(Serialize)]
struct Coverage {
    questions: usize,
    n: usize,
    threshold: f64,
    coverage: f64,
}

#[derive(Serialize)]
struct Metrics {
    accuracy: f64,
    precision: f64,
    mrr: f64,
    mean_rho: f64,
    mean_full_rho: f64,
    questions: usize,
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest { train, test, corpus } => {
            for (slot, v) in [
                (&mut cfg.train_path, train),
                (&mut cfg.test_path, test),
                (&mut cfg.corpus_path, corpus),
            ] {
                if v.is_some() {
                    slot.clone_from(v);
                }
            }
            let out = out_dir(&cfg)?;
            let train = load_dataset(cfg.require_path(&cfg.train_path, "data.train")?, Split::Train)?;
            let test = match &cfg.test_path {
                Some(p) => load_dataset(p, Split::Test)?,
                None => Dataset::new(Split::Test, Vec::new())?,
            };
            let corpus = load_qa_corpus(cfg.require_path(&cfg.corpus_path, "data.corpus")?)?;
            train.save(&out.join("train.jsonl"))?;
            test.save(&out.join("test.jsonl"))?;
            save_qa_corpus(&out.join("corpus.jsonl"), &corpus)?;
            let summary = IngestSummary {
                train_questions: train.questions.len(),
                test_questions: test.questions.len(),
                candidates: train
                    .questions
                    .iter()
                    .chain(&test.questions)
                    .map(|q| q.candidates.len())
                    .sum(),
                corpus_pairs: corpus.len(),
            };
            write_json(&out.join("ingest.json"), &summary)?;
            print_json(&summary)
        }
        Command::FitTfidf => {
            let out = out_dir(&cfg)?;
            let tfidf = pipeline(&cfg, provider_config(&cfg))?.fit_tfidf(cfg.feature_vocab_size())?;
            write_json(&out.join("tfidf.json"), &tfidf)?;
            print_json(&serde_json::json!({ "vocab_size": tfidf.vocab_size() }))
        }
        Command::BuildIndex(args) => {
            let out = out_dir(&cfg)?;
            let p = pipeline(&cfg, provider_config(&cfg))?;
            let ds = dataset(&cfg, args)?;
            let mut entries = Vec::with_capacity(ds.questions.len());
            let mut queries = Vec::with_capacity(ds.questions.len());
            for q in &ds.questions {
                let query = p.pre.question(&q.text);
                entries.push(CacheEntry::from_results(&q.question_id, &p.index.retrieve(&query, &p.retrieval)?));
                queries.push(query);
            }
            save_cache(&out.join("retrieval.jsonl"), &entries)?;
            let report = Coverage {
                questions: queries.len(),
                n: cfg.retrieval.max_candidates,
                threshold: cfg.retrieval.threshold,
                coverage: p.index.coverage(&queries, &p.retrieval)?,
            };
            write_json(&out.join("coverage.json"), &report)?;
            print_json(&report)
        }
        Command::ExtractFeatures {
            data,
            feature_config,
            tfidf,
        } => {
            let out = out_dir(&cfg)?;
            let p = pipeline(&cfg, provider_config(&cfg))?;
            let ds = dataset(&cfg, data)?;
            let features: BaselineFeatureConfig = match feature_config {
                Some(path) => read_json(path)?,
                None if ds.split == Split::Train => fit_baseline_features(&p, &ds, cfg.feature_vocab_size()),
                None => bail!("--feature-config is required for a test split"),
            };
            let tfidf: TfidfModel = match tfidf {
                Some(path) => read_json(path)?,
                None => p.fit_tfidf(features.vocab_size)?,
            };
            let rows = extract_features(&p, &ds, &tfidf, &features)?;
            save_features(&out.join("features.jsonl"), &rows)?;
            write_json(&out.join("feature_config.json"), &features)?;
            write_json(&out.join("feature_layout.json"), &features.layout())?;
            write_json(&out.join("tfidf.json"), &tfidf)?;
            print_json(&serde_json::json!({ "rows": rows.len(), "width": features.len() }))
        }
        Command::TrainBaseline {
            features,
            feature_config,
            tfidf,
            no_hinge,
        } => {
            let out = out_dir(&cfg)?;
            let rows = medrank::baseline::load_features(features)?;
            let hinge = HingeConfig::default();
            let model = train_baseline(
                &rows,
                read_json(feature_config)?,
                read_json(tfidf)?,
                &LogRegConfig::default(),
                (!no_hinge).then_some(&hinge),
            )?;
            write_json(&out.join("baseline.json"), &model)?;
            print_json(&serde_json::json!({ "rows": rows.len(), "hinge": model.hinge.is_some() }))
        }
        Command::TrainJoint => {
            let out = out_dir(&cfg)?;
            let train_cfg = cfg.train_config()?;
            let p = pipeline(&cfg, provider_config(&cfg))?;
            let ds = load_dataset(cfg.require_path(&cfg.train_path, "data.train")?, Split::Train)?;
            let (checkpoint, trace) = train_joint(&p, &ds, &cfg.joint(), &train_cfg, |s| {
                eprintln!("epoch {} loss {:.6} filter {:.6} pair {:.6}", s.epoch, s.loss, s.filter, s.pair)
            })?;
            let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
            checkpoint.save(&path)?;
            write_jsonl(&out.join("trace.jsonl"), &trace)?;
            print_json(&serde_json::json!({
                "checkpoint": path,
                "epochs": trace.len(),
                "final_loss": trace.last().map(|s| s.loss),
            }))
        }
        Command::Predict {
            data,
            checkpoint,
            baseline,
            ranker,
        } => {
            let out = out_dir(&cfg)?;
            let ds = dataset(&cfg, data)?;
            let predictions = match (checkpoint.as_ref().or(cfg.checkpoint.as_ref()), baseline) {
                (_, Some(path)) => {
                    let model: BaselineModel = read_json(path)?;
                    let p = pipeline(&cfg, provider_config(&cfg))?;
                    let rows = extract_features(&p, &ds, &model.tfidf, &model.features)?;
                    let ranker = match ranker {
                        RankerArg::Logistic => BaselineRanker::Logistic,
                        RankerArg::Hinge => BaselineRanker::Hinge,
                    };
                    predict_baseline(&model, &rows, ranker)?
                }
                (Some(path), None) => {
                    let ckpt = Checkpoint::load(path)?;
                    let p = pipeline(&cfg, ckpt.provider.clone())?;
                    predict_joint(&p, &ckpt, &ds)?
                }
                (None, None) => bail!("missing key `model.checkpoint` (or pass --checkpoint / --baseline)"),
            };
            save_predictions(&out.join("predictions.jsonl"), &predictions)?;
            print_json(&serde_json::json!({ "questions": predictions.len() }))
        }
        Command::Evaluate { data, predictions } => {
            let out = out_dir(&cfg)?;
            let report = evaluate(&load_predictions(predictions)?, &dataset(&cfg, data)?)?;
            let metrics = Metrics {
                accuracy: report.accuracy,
                precision: report.precision,
                mrr: report.mrr,
                mean_rho: report.mean_rho,
                mean_full_rho: report.mean_full_rho,
                questions: report.per_question.len(),
            };
            write_json(&out.join("metrics.json"), &report)?;
            write_csv(&out.join("per_question.csv"), &report.per_question)?;
            print_json(&metrics)
        }
        Command::Analyze { data, predictions } => {
            let out = out_dir(&cfg)?;
            let analysis = analyze(&load_predictions(predictions)?, &dataset(&cfg, data)?)?;
            write_json(&out.join("analysis.json"), &analysis)?;
            write_analysis_csv(out, &analysis)?;
            print_json(&analysis)
        }
        Command::Gradcheck { epsilon, tolerance } => {
            let report = joint_gradcheck(cfg.seed.unwrap_or(0), cfg.alpha, *epsilon)?;
            print_json(&serde_json::json!({
                "max_rel_error": report.max_rel_error,
                "checked": report.checked,
                "worst": report.worst,
                "tolerance": tolerance,
            }))?;
            if !(report.max_rel_error <= *tolerance) {
                bail!(
                    "max relative error {:.3e} exceeds {:.1e}",
                    report.max_rel_error,
                    tolerance
                );
            }
            Ok(())
        }
        Command::Synth { questions } => {
            if let Some(q) = questions {
                cfg.synth_questions = *q;
            }
            let out = out_dir(&cfg)?;
            let data = cfg.synth_config()?.generate()?;
            data.write(out)?;
            print_json(&serde_json::json!({
                "train_questions": data.train.questions.len(),
                "test_questions": data.test.questions.len(),
                "corpus_pairs": data.corpus.len(),
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": format!("{e:#}"),
                "command": cli.command.name(),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
