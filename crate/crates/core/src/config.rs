//! Flat `key=value` run configuration with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos surface early.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tensornet::{AdamConfig, OptimizerConfig};

use crate::error::{io_err, Error, Result};
use crate::joint::{JointConfig, TrainConfig};
use crate::preprocess::{AbbreviationDict, Preprocessor, SentenceSplitter};
use crate::providers::{ProviderConfig, ProviderKind};
use crate::retrieval::{Direction, RetrievalConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub corpus_path: Option<PathBuf>,
    pub abbreviations: Option<PathBuf>,
    pub guards: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub provider: ProviderConfig,
    pub retrieval: RetrievalConfig,
    pub direction: Direction,
    pub expand_questions: bool,
    pub expand_answers: bool,
    pub alpha: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub augmentation: bool,
    pub seed: Option<u64>,
    pub scaled_down: bool,
    /// Baseline TF-IDF width; defaults to the joint model's metadata vocabulary.
    pub feature_vocab: Option<usize>,
    pub synth_questions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            test_path: None,
            corpus_path: None,
            abbreviations: None,
            guards: None,
            checkpoint: None,
            out: None,
            provider: ProviderConfig::default(),
            retrieval: RetrievalConfig::default(),
            direction: Direction::default(),
            expand_questions: true,
            expand_answers: true,
            alpha: 2.0,
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            weight_decay: 0.0,
            augmentation: true,
            seed: None,
            scaled_down: false,
            feature_vocab: None,
            synth_questions: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn kind_name(kind: ProviderKind) -> &'static str {
    match kind {
        ProviderKind::ToyHash => "toy_hash",
        ProviderKind::TfidfCosine => "tfidf_cosine",
        ProviderKind::Precomputed => "precomputed",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Applies one setting; used by the file parser and by flag overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.train" => self.train_path = path(value),
            "data.test" => self.test_path = path(value),
            "data.corpus" => self.corpus_path = path(value),
            "dict.abbreviations" => self.abbreviations = path(value),
            "dict.guards" => self.guards = path(value),
            "model.checkpoint" => self.checkpoint = path(value),
            "out" => self.out = path(value),
            "provider.kind" => self.provider.kind = value.parse()?,
            "provider.dim" => self.provider.dim = parse(key, value)?,
            "provider.seed" => self.provider.seed = parse(key, value)?,
            "provider.vocab_size" => self.provider.vocab_size = parse(key, value)?,
            "provider.precomputed" => self.provider.precomputed_path = path(value),
            "provider.zero_fill_missing" => self.provider.zero_fill_missing = parse_bool(key, value)?,
            "retrieval.N" => self.retrieval.max_candidates = parse(key, value)?,
            "retrieval.T" => self.retrieval.threshold = parse(key, value)?,
            "retrieval.direction" => {
                self.direction = match value {
                    "query_is_chq" => Direction::QueryIsChq,
                    "query_is_faq" => Direction::QueryIsFaq,
                    _ => return Err(Error::Config(format!("{key}: unknown direction `{value}`"))),
                }
            }
            "preprocess.expand_questions" => self.expand_questions = parse_bool(key, value)?,
            "preprocess.expand_answers" => self.expand_answers = parse_bool(key, value)?,
            "train.alpha" => self.alpha = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(Error::Config(format!("{key}: unknown optimizer `{value}`"))),
                }
            }
            "train.lr" => self.lr = parse(key, value)?,
            "train.weight_decay" => self.weight_decay = parse(key, value)?,
            "train.augmentation" => self.augmentation = parse_bool(key, value)?,
            "seed" => self.seed = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "scaled_down" => self.scaled_down = parse_bool(key, value)?,
            "features.vocab_size" => {
                self.feature_vocab = if value.is_empty() { None } else { Some(parse(key, value)?) }
            }
            "synth.questions" => self.synth_questions = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("data.train", p(&self.train_path));
        kv("data.test", p(&self.test_path));
        kv("data.corpus", p(&self.corpus_path));
        kv("dict.abbreviations", p(&self.abbreviations));
        kv("dict.guards", p(&self.guards));
        kv("model.checkpoint", p(&self.checkpoint));
        kv("out", p(&self.out));
        kv("provider.kind", kind_name(self.provider.kind).into());
        kv("provider.dim", self.provider.dim.to_string());
        kv("provider.seed", self.provider.seed.to_string());
        kv("provider.vocab_size", self.provider.vocab_size.to_string());
        kv("provider.precomputed", p(&self.provider.precomputed_path));
        kv("provider.zero_fill_missing", self.provider.zero_fill_missing.to_string());
        kv("retrieval.N", self.retrieval.max_candidates.to_string());
        kv("retrieval.T", self.retrieval.threshold.to_string());
        kv(
            "retrieval.direction",
            match self.direction {
                Direction::QueryIsChq => "query_is_chq",
                Direction::QueryIsFaq => "query_is_faq",
            }
            .into(),
        );
        kv("preprocess.expand_questions", self.expand_questions.to_string());
        kv("preprocess.expand_answers", self.expand_answers.to_string());
        kv("train.alpha", self.alpha.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv(
            "train.optimizer",
            match self.optimizer {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam => "adam",
            }
            .into(),
        );
        kv("train.lr", self.lr.to_string());
        kv("train.weight_decay", self.weight_decay.to_string());
        kv("train.augmentation", self.augmentation.to_string());
        kv("seed", self.seed.map(|v| v.to_string()).unwrap_or_default());
        kv("scaled_down", self.scaled_down.to_string());
        kv("features.vocab_size", self.feature_vocab.map(|v| v.to_string()).unwrap_or_default());
        kv("synth.questions", self.synth_questions.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.provider.validate()?;
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("train.alpha must be >= 0".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.lr must be > 0 and train.weight_decay >= 0".into()));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("missing key `seed`".into()))
    }

    pub fn require_path<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn joint(&self) -> JointConfig {
        if self.scaled_down {
            JointConfig::scaled_down()
        } else {
            JointConfig::default()
        }
    }

    pub fn feature_vocab_size(&self) -> usize {
        self.feature_vocab.unwrap_or(self.joint().vocab_size)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::Sgd {
                lr: self.lr,
                weight_decay: self.weight_decay,
            },
            OptimizerKind::Adam => OptimizerConfig::Adam(AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            }),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            alpha: self.alpha,
            epochs: self.epochs,
            optimizer: self.optimizer_config(),
            seed: self.require_seed()?,
            augmentation: self.augmentation,
            retrieval: self.retrieval,
        })
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            questions: self.synth_questions,
            seed: self.require_seed()?,
            ..SynthConfig::default()
        })
    }

    pub fn preprocessor(&self) -> Result<Preprocessor> {
        let abbreviations = match &self.abbreviations {
            Some(p) => AbbreviationDict::from_tsv(p)?,
            None => AbbreviationDict::default(),
        };
        let splitter = match &self.guards {
            Some(p) => SentenceSplitter::from_guard_file(p)?,
            None => SentenceSplitter::default(),
        };
        Ok(Preprocessor {
            splitter,
            abbreviations,
            coref: None,
            expand_questions: self.expand_questions,
            expand_answers: self.expand_answers,
        })
    }
}
