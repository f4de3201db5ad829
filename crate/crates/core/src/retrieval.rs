//! Retrieval of corpus QA pairs whose questions entail a query.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::QAPair;
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::providers::EntailmentProvider;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Maximum number of entailed pairs returned.
    pub max_candidates: usize,
    /// Minimum entailment confidence.
    pub threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            max_candidates: 3,
            threshold: 0.7,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_candidates < 1 {
            return Err(Error::Config("retrieval.N must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("retrieval.T must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Which side of the RQE pair the query plays.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `rqe(query, corpus question)`: does the corpus question entail the query.
    #[default]
    QueryIsChq,
    /// `rqe(corpus question, query)`.
    QueryIsFaq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntailedCandidate {
    pub pair: QAPair,
    /// Position in the corpus.
    pub corpus_index: usize,
    pub score: f64,
    pub embedding: Vec<f64>,
    /// False only for the fallback pair returned when nothing clears the threshold.
    pub above_threshold: bool,
}

pub struct EntailmentIndex {
    pairs: Vec<QAPair>,
    provider: Arc<dyn EntailmentProvider>,
    direction: Direction,
}

impl std::fmt::Debug for EntailmentIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EntailmentIndex")
            .field("pairs", &self.pairs.len())
            .field("direction", &self.direction)
            .finish()
    }
}

impl EntailmentIndex {
    pub fn new(pairs: Vec<QAPair>, provider: Arc<dyn EntailmentProvider>) -> Self {
        Self {
            pairs,
            provider,
            direction: Direction::default(),
        }
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn pairs(&self) -> &[QAPair] {
        &self.pairs
    }

    pub fn provider(&self) -> &Arc<dyn EntailmentProvider> {
        &self.provider
    }

    fn score_pair(&self, query: &str, pair: &QAPair) -> Result<crate::providers::RqeResult> {
        match self.direction {
            Direction::QueryIsChq => self.provider.rqe(query, &pair.question_text),
            Direction::QueryIsFaq => self.provider.rqe(&pair.question_text, query),
        }
    }

    /// RQE score of the query against every corpus question, in corpus order.
    pub fn score_all(&self, query: &str) -> Result<Vec<f64>> {
        self.pairs
            .iter()
            .map(|p| self.score_pair(query, p).map(|r| r.score))
            .collect()
    }

    fn candidate(&self, query: &str, corpus_index: usize, above_threshold: bool) -> Result<EntailedCandidate> {
        let pair = &self.pairs[corpus_index];
        let r = self.score_pair(query, pair)?;
        Ok(EntailedCandidate {
            pair: pair.clone(),
            corpus_index,
            score: r.score,
            embedding: r.embedding,
            above_threshold,
        })
    }

    /// Up to `N` pairs scoring at least `T`, best first, ties broken by corpus
    /// order. When nothing clears `T` the single best pair is returned anyway,
    /// so the result is never empty.
    pub fn retrieve(&self, query: &str, config: &RetrievalConfig) -> Result<Vec<EntailedCandidate>> {
        config.validate()?;
        if self.pairs.is_empty() {
            return Err(Error::Empty("entailment index"));
        }
        let scores = self.score_all(query)?;
        let picked = select(&scores, config);
        let fallback = scores[picked[0]] < config.threshold;
        picked
            .into_iter()
            .map(|i| self.candidate(query, i, !fallback))
            .collect()
    }

    /// Rebuilds retrieval results from cached `(pair_id, score)` entries.
    pub fn restore(&self, query: &str, cached: &[CachedHit], config: &RetrievalConfig) -> Result<Vec<EntailedCandidate>> {
        let by_id: HashMap<&str, usize> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (p.pair_id.as_str(), i))
            .collect();
        cached
            .iter()
            .map(|hit| {
                let idx = *by_id
                    .get(hit.pair_id.as_str())
                    .ok_or_else(|| Error::InvalidRecord(format!("cached pair {} not in corpus", hit.pair_id)))?;
                let mut c = self.candidate(query, idx, hit.score >= config.threshold)?;
                c.score = hit.score;
                Ok(c)
            })
            .collect()
    }

    /// Fraction of queries with at least one pair scoring `>= T`. Fallback
    /// results do not count.
    pub fn coverage<S: AsRef<str>>(&self, queries: &[S], config: &RetrievalConfig) -> Result<f64> {
        if queries.is_empty() {
            return Ok(0.0);
        }
        let mut covered = 0;
        for q in queries {
            if self.score_all(q.as_ref())?.iter().any(|&s| s >= config.threshold) {
                covered += 1;
            }
        }
        Ok(covered as f64 / queries.len() as f64)
    }
}

/// Indices chosen by the retrieval rule from a list of scores.
pub fn select(scores: &[f64], config: &RetrievalConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep corpus order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let passing: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| scores[i] >= config.threshold)
        .take(config.max_candidates)
        .collect();
    if passing.is_empty() {
        order.into_iter().take(1).collect()
    } else {
        passing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedHit {
    pub pair_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub query_id: String,
    pub candidates: Vec<CachedHit>,
}

impl CacheEntry {
    pub fn from_results(query_id: &str, results: &[EntailedCandidate]) -> Self {
        Self {
            query_id: query_id.to_string(),
            candidates: results
                .iter()
                .map(|c| CachedHit {
                    pair_id: c.pair.pair_id.clone(),
                    score: c.score,
                })
                .collect(),
        }
    }
}

pub fn save_cache(path: &Path, entries: &[CacheEntry]) -> Result<()> {
    write_jsonl(path, entries)
}

pub fn load_cache(path: &Path) -> Result<HashMap<String, Vec<CachedHit>>> {
    Ok(read_jsonl::<CacheEntry>(path)?
        .into_iter()
        .map(|(_, e)| (e.query_id, e.candidates))
        .collect())
}
