//! Feature-engineered baseline: ANLI, feature assembly, a logistic-regression
//! filter and a pairwise hinge ranker.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::prepare::{PreparedCandidate, PreparedEntailed};
use crate::providers::{EntailmentProvider, TfidfModel};

/// Mean over candidate sentences of the best entailment probability against
/// any entailed-answer sentence. The entailed sentence is the premise.
pub fn anli(candidate: &[String], entailed: &[String], provider: &dyn EntailmentProvider) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Empty("candidate sentences"));
    }
    if entailed.is_empty() {
        return Ok(0.0);
    }
    let mut matrix = Vec::with_capacity(candidate.len());
    for s in candidate {
        let row = entailed
            .iter()
            .map(|p| provider.nli(p, s).map(|r| r.entailment()))
            .collect::<Result<Vec<_>>>()?;
        matrix.push(row);
    }
    anli_from_scores(&matrix)
}

/// ANLI from a `|S| x |P|` matrix of entailment probabilities.
pub fn anli_from_scores(scores: &[Vec<f64>]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("candidate sentences"));
    }
    let total: f64 = scores
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum();
    Ok(total / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFeatureConfig {
    /// Number of RQE slots.
    pub n: usize,
    pub threshold: f64,
    /// TF-IDF width.
    pub vocab_size: usize,
    pub source_vocab: Vec<String>,
    /// RQE embedding width.
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Named, contiguous slices of a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub segments: Vec<Segment>,
    pub len: usize,
}

impl FeatureLayout {
    pub fn from_sizes(sizes: &[(&str, usize)]) -> Self {
        let mut offset = 0;
        let segments = sizes
            .iter()
            .map(|&(name, len)| {
                let s = Segment {
                    name: name.into(),
                    offset,
                    len,
                };
                offset += len;
                s
            })
            .collect();
        Self { segments, len: offset }
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

impl BaselineFeatureConfig {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::from_sizes(&[
            ("source", self.source_vocab.len()),
            ("length_sentences", 1),
            ("system_rank", 1),
            ("tfidf_candidate", self.vocab_size),
            ("tfidf_entailed", self.vocab_size),
            ("rqe_scores", self.n),
            ("rqe_embeddings", self.n * self.dim),
            ("anli", self.n),
        ])
    }

    pub fn len(&self) -> usize {
        self.source_vocab.len() + 2 + 2 * self.vocab_size + self.n * (2 + self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One-hot of `value` over `vocab`; unknown values give the zero vector.
pub fn one_hot(vocab: &[String], value: &str) -> Vec<f64> {
    vocab.iter().map(|v| if v == value { 1.0 } else { 0.0 }).collect()
}

/// Baseline feature vector of one candidate. Entailed pairs are used best
/// first; unused slots stay zero.
pub fn assemble_baseline_features(
    candidate: &PreparedCandidate,
    entailed: &[PreparedEntailed],
    tfidf: &TfidfModel,
    config: &BaselineFeatureConfig,
    provider: &dyn EntailmentProvider,
) -> Result<Vec<f64>> {
    if entailed.len() > config.n {
        return Err(Error::Dimension(format!(
            "{} entailed pairs for {} slots",
            entailed.len(),
            config.n
        )));
    }
    if tfidf.vocab_size() != config.vocab_size {
        return Err(Error::Dimension(format!(
            "TF-IDF width {} but layout expects {}",
            tfidf.vocab_size(),
            config.vocab_size
        )));
    }
    let mut order: Vec<&PreparedEntailed> = entailed.iter().collect();
    order.sort_by(|a, b| b.hit.score.total_cmp(&a.hit.score));

    let mut out = Vec::with_capacity(config.len());
    out.extend(one_hot(&config.source_vocab, &candidate.answer.source));
    out.push(candidate.sentences.len() as f64);
    out.push(candidate.answer.system_rank as f64);
    out.extend(tfidf.transform(&candidate.sentences.join()));
    match order.first() {
        Some(best) => out.extend(tfidf.transform(&best.sentences.join())),
        None => out.extend(std::iter::repeat_n(0.0, config.vocab_size)),
    }
    let mut scores = vec![0.0; config.n];
    let mut embeddings = vec![0.0; config.n * config.dim];
    let mut anlis = vec![0.0; config.n];
    for (k, e) in order.iter().enumerate() {
        if e.hit.embedding.len() != config.dim {
            return Err(Error::Dimension(format!(
                "RQE embedding has length {}, expected {}",
                e.hit.embedding.len(),
                config.dim
            )));
        }
        scores[k] = e.hit.score;
        embeddings[k * config.dim..(k + 1) * config.dim].copy_from_slice(&e.hit.embedding);
        anlis[k] = anli(&candidate.sentences, &e.sentences, provider)?;
    }
    out.extend(scores);
    out.extend(embeddings);
    out.extend(anlis);
    debug_assert_eq!(out.len(), config.len());
    Ok(out)
}

/// One row of a persisted feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub question_id: String,
    pub answer_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_rank: Option<u32>,
    #[serde(default)]
    pub system_rank: u32,
    pub features: Vec<f64>,
}

pub fn save_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRow>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Per-feature `(mean, scale)`; constant features get scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[Vec<f64>]) -> Result<Self> {
        let d = xs.first().ok_or(Error::Empty("feature matrix"))?.len();
        if xs.iter().any(|x| x.len() != d) {
            return Err(Error::Dimension("ragged feature matrix".into()));
        }
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for x in xs {
            var.iter_mut()
                .zip(x.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "feature vector has length {}, expected {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub weight_decay: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            steps: 500,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    /// A model with every weight at zero.
    pub fn zeros(dim: usize) -> Self {
        Self {
            standardizer: Standardizer {
                mean: vec![0.0; dim],
                scale: vec![1.0; dim],
            },
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.weights, &self.standardizer.apply(x)?) + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.decision(x).map(tensornet::sigmoid)
    }
}

/// Full-batch gradient descent on mean BCE plus `weight_decay/2 * |w|^2`,
/// over standardized features.
pub fn train_logreg(xs: &[Vec<f64>], ys: &[bool], config: &LogRegConfig) -> Result<LogisticModel> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} rows for {} labels", xs.len(), ys.len())));
    }
    if !ys.iter().any(|&y| y) || ys.iter().all(|&y| y) {
        return Err(Error::Training("logistic regression needs both classes".into()));
    }
    let standardizer = Standardizer::fit(xs)?;
    let zs = xs.iter().map(|x| standardizer.apply(x)).collect::<Result<Vec<_>>>()?;
    let d = standardizer.mean.len();
    let n = zs.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..config.steps {
        let mut gw: Vec<f64> = w.iter().map(|wi| config.weight_decay * wi).collect();
        let mut gb = 0.0;
        for (z, &y) in zs.iter().zip(ys) {
            let err = tensornet::sigmoid(dot(&w, z) + b) - if y { 1.0 } else { 0.0 };
            gw.iter_mut().zip(z).for_each(|(g, zi)| *g += err * zi / n);
            gb += err / n;
        }
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= config.learning_rate * g);
        b -= config.learning_rate * gb;
    }
    Ok(LogisticModel {
        standardizer,
        weights: w,
        bias: b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda: f64,
}

impl Default for HingeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 300,
            lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeRanker {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
}

impl HingeRanker {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.weights, &self.standardizer.apply(x)?))
    }
}

/// `(better, worse)` index pairs: every within-question pair with distinct
/// reference ranks, the smaller rank being better.
pub fn preference_pairs(ranks: &[u32]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..ranks.len() {
        for j in i + 1..ranks.len() {
            match ranks[i].cmp(&ranks[j]) {
                std::cmp::Ordering::Less => out.push((i, j)),
                std::cmp::Ordering::Greater => out.push((j, i)),
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    out
}

/// Hinge loss `sum max(0, 1 - w.(x_b - x_w)) + lambda |w|^2` over all pairs.
pub fn hinge_objective(w: &[f64], diffs: &[Vec<f64>], lambda: f64) -> f64 {
    diffs.iter().map(|d| (1.0 - dot(w, d)).max(0.0)).sum::<f64>() + lambda * dot(w, w)
}

/// Subgradient descent on the pairwise hinge objective. `groups` holds one
/// `(features, reference ranks)` per question.
pub fn train_pairwise_hinge(groups: &[(Vec<Vec<f64>>, Vec<u32>)], config: &HingeConfig) -> Result<HingeRanker> {
    let all: Vec<Vec<f64>> = groups.iter().flat_map(|(xs, _)| xs.iter().cloned()).collect();
    if all.is_empty() {
        return Err(Error::Training("no ranked candidates".into()));
    }
    let standardizer = Standardizer::fit(&all)?;
    let mut diffs = Vec::new();
    for (xs, ranks) in groups {
        if xs.len() != ranks.len() {
            return Err(Error::Dimension("ranks do not align with features".into()));
        }
        let zs = xs.iter().map(|x| standardizer.apply(x)).collect::<Result<Vec<_>>>()?;
        for (b, w) in preference_pairs(ranks) {
            diffs.push(zs[b].iter().zip(&zs[w]).map(|(p, q)| p - q).collect::<Vec<f64>>());
        }
    }
    if diffs.is_empty() {
        return Err(Error::Training("no preference pairs".into()));
    }
    let d = standardizer.mean.len();
    let p = diffs.len() as f64;
    let mut w = vec![0.0; d];
    for _ in 0..config.epochs {
        let mut g: Vec<f64> = w.iter().map(|wi| 2.0 * config.lambda * wi).collect();
        for diff in &diffs {
            if dot(&w, diff) < 1.0 {
                g.iter_mut().zip(diff).for_each(|(gi, di)| *gi -= di / p);
            }
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= config.learning_rate * gi);
    }
    Ok(HingeRanker {
        standardizer,
        weights: w,
    })
}

/// Indices sorted by score descending, ties by ascending system rank.
pub fn rank_by_score(scores: &[f64], system_ranks: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(system_ranks[a].cmp(&system_ranks[b]))
    });
    order
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineRanker {
    /// Sort by filter probability.
    #[default]
    Logistic,
    Hinge,
}

/// Trained baseline: layout, the TF-IDF model it was built with and both learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub features: BaselineFeatureConfig,
    pub layout: FeatureLayout,
    pub tfidf: TfidfModel,
    pub logistic: LogisticModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hinge: Option<HingeRanker>,
}

impl BaselineModel {
    /// Relevance decisions and ranking of one question's feature rows.
    pub fn predict(&self, rows: &[&FeatureRow], ranker: BaselineRanker) -> Result<crate::evalkit::Prediction> {
        let first = rows.first().ok_or(Error::Empty("feature rows"))?;
        let probs = rows
            .iter()
            .map(|r| self.logistic.predict(&r.features))
            .collect::<Result<Vec<_>>>()?;
        let scores = match (ranker, &self.hinge) {
            (BaselineRanker::Logistic, _) => probs.clone(),
            (BaselineRanker::Hinge, Some(h)) => rows.iter().map(|r| h.score(&r.features)).collect::<Result<Vec<_>>>()?,
            (BaselineRanker::Hinge, None) => return Err(Error::Config("baseline has no hinge ranker".into())),
        };
        let system: Vec<u32> = rows.iter().map(|r| r.system_rank).collect();
        let order = rank_by_score(&scores, &system);
        let ranking: Vec<String> = order.iter().map(|&i| rows[i].answer_id.clone()).collect();
        let relevant = order
            .iter()
            .filter(|&&i| probs[i] >= 0.5)
            .map(|&i| rows[i].answer_id.clone())
            .collect();
        Ok(crate::evalkit::Prediction {
            question_id: first.question_id.clone(),
            ranking,
            relevant,
            scores: rows
                .iter()
                .zip(&scores)
                .map(|(r, &s)| (r.answer_id.clone(), s))
                .collect(),
        })
    }
}
