use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{similarity_probs, EntailmentProvider, NliResult, RqeResult};
use crate::error::{Error, Result};
use crate::io::read_jsonl;

/// Lookup key of a text pair: SHA-256 hex of `text_a + "\x1f" + text_b`.
pub fn pair_key(text_a: &str, text_b: &str) -> String {
    let mut h = Sha256::new();
    h.update(text_a.as_bytes());
    h.update([0x1f]);
    h.update(text_b.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedRecord {
    pub key: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<[f64; 3]>,
    pub embedding: Vec<f64>,
}

/// Scores and embeddings produced by an external model, keyed by [`pair_key`].
/// NLI and RQE lookups share one table.
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    dim: usize,
    zero_fill: bool,
    table: HashMap<String, PrecomputedRecord>,
}

impl PrecomputedProvider {
    pub fn new(records: Vec<PrecomputedRecord>, dim: usize, zero_fill: bool) -> Result<Self> {
        let mut table = HashMap::with_capacity(records.len());
        for r in records {
            if r.embedding.len() != dim {
                return Err(Error::Dimension(format!(
                    "precomputed embedding for {} has length {}, expected {dim}",
                    r.key,
                    r.embedding.len()
                )));
            }
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::InvalidRecord(format!("score {} for {} outside [0, 1]", r.score, r.key)));
            }
            if let Some(p) = r.probs {
                if p.iter().any(|&x| x < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidRecord(format!("probs for {} are not a distribution", r.key)));
                }
            }
            table.insert(r.key.clone(), r);
        }
        Ok(Self {
            dim,
            zero_fill,
            table,
        })
    }

    pub fn load(path: &Path, dim: usize, zero_fill: bool) -> Result<Self> {
        let records = read_jsonl::<PrecomputedRecord>(path)?
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        Self::new(records, dim, zero_fill)
    }

    fn lookup(&self, a: &str, b: &str) -> Result<Option<&PrecomputedRecord>> {
        let key = pair_key(a, b);
        match self.table.get(&key) {
            Some(r) => Ok(Some(r)),
            None if self.zero_fill => Ok(None),
            None => Err(Error::MissingKey(key)),
        }
    }
}

impl EntailmentProvider for PrecomputedProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn nli(&self, a: &str, b: &str) -> Result<NliResult> {
        Ok(match self.lookup(a, b)? {
            Some(r) => NliResult {
                probs: r.probs.unwrap_or_else(|| similarity_probs(r.score)),
                embedding: r.embedding.clone(),
            },
            None => NliResult {
                probs: similarity_probs(0.0),
                embedding: vec![0.0; self.dim],
            },
        })
    }

    fn rqe(&self, chq: &str, faq: &str) -> Result<RqeResult> {
        Ok(match self.lookup(chq, faq)? {
            Some(r) => RqeResult {
                score: r.score,
                embedding: r.embedding.clone(),
            },
            None => RqeResult {
                score: 0.0,
                embedding: vec![0.0; self.dim],
            },
        })
    }
}
