//! Sentence-pair entailment scoring behind a pluggable interface.
//!
//! Three deterministic providers stand in for fine-tuned transformer models:
//! a seeded feature-hashing model, a TF-IDF cosine model, and a loader for
//! scores and embeddings computed elsewhere.
//!
//! Embedding layout: an NLI embedding starts with the three class
//! probabilities and an RQE embedding starts with the score, followed by a
//! seeded random projection of pair features. A classifier's penultimate
//! representation determines its output, so the score is kept linearly
//! readable from the embedding.

mod precomputed;
pub mod tfidf;

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use precomputed::{pair_key, PrecomputedProvider, PrecomputedRecord};
pub use tfidf::{tokenize, TfidfModel};

pub const DEFAULT_EMBEDDING_DIM: usize = 768;

/// Entailment, neutral, contradiction probabilities plus a pair embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct NliResult {
    pub probs: [f64; 3],
    pub embedding: Vec<f64>,
}

impl NliResult {
    pub fn entailment(&self) -> f64 {
        self.probs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RqeResult {
    pub score: f64,
    pub embedding: Vec<f64>,
}

pub trait EntailmentProvider: Send + Sync {
    /// Embedding width `D`.
    fn dim(&self) -> usize;

    /// Does `sentence_a` (premise) entail `sentence_b` (hypothesis)?
    fn nli(&self, sentence_a: &str, sentence_b: &str) -> Result<NliResult>;

    /// Does answering `faq` answer `chq`? Score in `[0, 1]`.
    fn rqe(&self, chq: &str, faq: &str) -> Result<RqeResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    ToyHash,
    TfidfCosine,
    Precomputed,
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy_hash" => Ok(Self::ToyHash),
            "tfidf_cosine" => Ok(Self::TfidfCosine),
            "precomputed" => Ok(Self::Precomputed),
            other => Err(Error::Config(format!("unknown provider kind `{other}`"))),
        }
    }
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ToyHash => "toy_hash",
            Self::TfidfCosine => "tfidf_cosine",
            Self::Precomputed => "precomputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub seed: u64,
    /// Vocabulary size of the provider's own TF-IDF model (`tfidf_cosine`).
    pub vocab_size: usize,
    /// Scores file for `precomputed`.
    pub precomputed_path: Option<PathBuf>,
    /// `precomputed`: answer unknown keys with zeros instead of failing.
    pub zero_fill_missing: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::TfidfCosine,
            dim: DEFAULT_EMBEDDING_DIM,
            seed: 0,
            vocab_size: 20_000,
            precomputed_path: None,
            zero_fill_missing: false,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("provider dimension must be >= 1".into()));
        }
        Ok(())
    }
}

/// Builds the configured provider. `fit_texts` trains the TF-IDF model of
/// `tfidf_cosine` and is ignored by the other kinds.
pub fn build_provider<S: AsRef<str>>(
    config: &ProviderConfig,
    fit_texts: &[S],
) -> Result<Arc<dyn EntailmentProvider>> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::ToyHash => Arc::new(ToyHashProvider::new(config.dim, config.seed)),
        ProviderKind::TfidfCosine => {
            let model = TfidfModel::fit(fit_texts, config.vocab_size)?;
            Arc::new(TfidfCosineProvider::new(model, config.dim, config.seed))
        }
        ProviderKind::Precomputed => {
            let path = config
                .precomputed_path
                .as_ref()
                .ok_or_else(|| Error::Config("precomputed provider needs a scores path".into()))?;
            Arc::new(PrecomputedProvider::load(path, config.dim, config.zero_fill_missing)?)
        }
    })
}

/// Maps a similarity in `[0, 1]` onto the simplex as `(s, (1-s)/2, (1-s)/2)`.
pub fn similarity_probs(s: f64) -> [f64; 3] {
    let s = s.clamp(0.0, 1.0);
    let rest = (1.0 - s) / 2.0;
    [s, rest, rest]
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a, stable across platforms and releases.
fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic random column `j` of a projection matrix with `rows` rows.
fn projection_column(seed: u64, j: u64, rows: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(j)));
    (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Writes `head` followed by the projection into a width-`dim` embedding.
fn assemble_embedding(dim: usize, head: &[f64], projected: &[f64]) -> Vec<f64> {
    head.iter().chain(projected).copied().take(dim).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Feature hashing of word unigrams and bigrams into `dim` buckets.
#[derive(Debug, Clone)]
pub struct ToyHashProvider {
    dim: usize,
    seed: u64,
    /// Row-major `[dim, dim]` projection of bucket-vector differences.
    projection: Vec<f64>,
}

impl ToyHashProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
        let scale = 1.0 / (dim as f64).sqrt();
        let projection = (0..dim * dim).map(|_| rng.gen_range(-scale..scale)).collect();
        Self {
            dim,
            seed,
            projection,
        }
    }

    fn buckets(&self, text: &str) -> Vec<f64> {
        let tokens = tokenize(text);
        let mut v = vec![0.0; self.dim];
        let mut add = |feature: &str| {
            let h = fnv1a(self.seed, feature.as_bytes());
            v[(h % self.dim as u64) as usize] += 1.0;
        };
        for t in &tokens {
            add(t);
        }
        for w in tokens.windows(2) {
            add(&format!("{} {}", w[0], w[1]));
        }
        v
    }

    fn pair(&self, a: &str, b: &str) -> (f64, Vec<f64>) {
        let ha = self.buckets(a);
        let hb = self.buckets(b);
        let score = cosine(&ha, &hb);
        let diff: Vec<f64> = ha.iter().zip(&hb).map(|(x, y)| x - y).collect();
        let projected = (0..self.dim)
            .map(|r| {
                self.projection[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .zip(&diff)
                    .map(|(w, d)| w * d)
                    .sum()
            })
            .collect::<Vec<f64>>();
        (score, projected)
    }
}

impl EntailmentProvider for ToyHashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn nli(&self, a: &str, b: &str) -> Result<NliResult> {
        let (s, projected) = self.pair(a, b);
        let probs = similarity_probs(s);
        Ok(NliResult {
            probs,
            embedding: assemble_embedding(self.dim, &probs, &projected),
        })
    }

    fn rqe(&self, chq: &str, faq: &str) -> Result<RqeResult> {
        let (score, projected) = self.pair(chq, faq);
        Ok(RqeResult {
            score,
            embedding: assemble_embedding(self.dim, &[score], &projected),
        })
    }
}

/// Cosine similarity of TF-IDF vectors. The projected pair features are
/// `[u; v; u*v; |u-v|]`, which is symmetric in its score but not in its
/// embedding.
#[derive(Debug, Clone)]
pub struct TfidfCosineProvider {
    model: TfidfModel,
    dim: usize,
    seed: u64,
}

impl TfidfCosineProvider {
    pub fn new(model: TfidfModel, dim: usize, seed: u64) -> Self {
        Self { model, dim, seed }
    }

    pub fn model(&self) -> &TfidfModel {
        &self.model
    }

    fn pair(&self, a: &str, b: &str, head_len: usize) -> (f64, Vec<f64>) {
        let u = self.model.transform_sparse(a);
        let v = self.model.transform_sparse(b);
        let score = tfidf::sparse_dot(&u, &v).clamp(0.0, 1.0);
        let rows = self.dim.saturating_sub(head_len);
        let mut projected = vec![0.0; rows];
        if rows == 0 {
            return (score, projected);
        }
        let vocab = self.model.vocab_size() as u64;
        let mut dense: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
        for &(i, x) in &u {
            dense.insert(i as u64, x);
        }
        for &(i, y) in &v {
            dense.insert(vocab + i as u64, y);
        }
        let mut union: std::collections::BTreeMap<usize, (f64, f64)> = std::collections::BTreeMap::new();
        for &(i, x) in &u {
            union.entry(i).or_default().0 = x;
        }
        for &(i, y) in &v {
            union.entry(i).or_default().1 = y;
        }
        for (i, (x, y)) in union {
            if x * y != 0.0 {
                dense.insert(2 * vocab + i as u64, x * y);
            }
            dense.insert(3 * vocab + i as u64, (x - y).abs());
        }
        for (j, value) in dense {
            if value == 0.0 {
                continue;
            }
            for (p, c) in projected.iter_mut().zip(projection_column(self.seed, j, rows)) {
                *p += value * c;
            }
        }
        (score, projected)
    }
}

impl EntailmentProvider for TfidfCosineProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn nli(&self, a: &str, b: &str) -> Result<NliResult> {
        let (s, projected) = self.pair(a, b, 3);
        let probs = similarity_probs(s);
        Ok(NliResult {
            probs,
            embedding: assemble_embedding(self.dim, &probs, &projected),
        })
    }

    fn rqe(&self, chq: &str, faq: &str) -> Result<RqeResult> {
        let (score, projected) = self.pair(chq, faq, 1);
        Ok(RqeResult {
            score,
            embedding: assemble_embedding(self.dim, &[score], &projected),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tfidf_provider(dim: usize) -> TfidfCosineProvider {
        let texts = [
            "chest pain after running",
            "high blood pressure treatment",
            "diabetes diet sugar",
            "pain relief options",
        ];
        TfidfCosineProvider::new(TfidfModel::fit(&texts, 100).unwrap(), dim, 7)
    }

    #[test]
    fn identical_sentences_fully_entail() {
        let p = tfidf_provider(16);
        let r = p.nli("chest pain", "chest pain").unwrap();
        assert!((r.entailment() - 1.0).abs() < 1e-12);
        assert_eq!(r.embedding.len(), 16);
        assert!((p.rqe("blood pressure", "blood pressure").unwrap().score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_sentences_split_remaining_mass() {
        let p = tfidf_provider(16);
        let r = p.nli("chest pain", "diabetes diet").unwrap();
        assert_eq!(r.probs, [0.0, 0.5, 0.5]);
        assert_eq!(p.rqe("chest pain", "diabetes diet").unwrap().score, 0.0);
    }

    #[test]
    fn providers_are_deterministic() {
        let a = tfidf_provider(12);
        let b = tfidf_provider(12);
        assert_eq!(a.nli("chest pain", "pain relief").unwrap(), b.nli("chest pain", "pain relief").unwrap());
        let h1 = ToyHashProvider::new(12, 3);
        let h2 = ToyHashProvider::new(12, 3);
        assert_eq!(h1.nli("a b c", "b c d").unwrap(), h2.nli("a b c", "b c d").unwrap());
        assert_eq!(h1.rqe("a b c", "b c d").unwrap(), h2.rqe("a b c", "b c d").unwrap());
    }

    #[test]
    fn toy_hash_is_order_sensitive_in_embedding() {
        let h = ToyHashProvider::new(32, 1);
        let ab = h.nli("fever and cough", "cough and fever").unwrap();
        let ba = h.nli("cough and fever", "fever and cough").unwrap();
        assert_ne!(ab.embedding, ba.embedding);
    }

    #[test]
    fn embedding_leads_with_scores() {
        let p = tfidf_provider(8);
        let r = p.nli("chest pain", "pain relief").unwrap();
        assert_eq!(&r.embedding[..3], &r.probs);
        let q = p.rqe("chest pain", "pain relief").unwrap();
        assert_eq!(q.embedding[0], q.score);
        // width smaller than the score head still honours D
        assert_eq!(tfidf_provider(2).nli("chest", "pain").unwrap().embedding.len(), 2);
    }

    proptest! {
        #[test]
        fn scores_stay_in_range(a in "[a-z ]{0,30}", b in "[a-z ]{0,30}") {
            let p = tfidf_provider(10);
            let h = ToyHashProvider::new(10, 9);
            for r in [p.nli(&a, &b).unwrap(), h.nli(&a, &b).unwrap()] {
                prop_assert!(r.probs.iter().all(|&x| x >= 0.0));
                prop_assert!((r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for r in [p.rqe(&a, &b).unwrap(), h.rqe(&a, &b).unwrap()] {
                prop_assert!((0.0..=1.0).contains(&r.score));
            }
        }

        #[test]
        fn tfidf_rqe_is_symmetric(a in "(chest|pain|blood|diet|sugar| ){0,8}", b in "(chest|pain|blood|diet|sugar| ){0,8}") {
            let p = tfidf_provider(6);
            prop_assert_eq!(p.rqe(&a, &b).unwrap().score, p.rqe(&b, &a).unwrap().score);
        }
    }
}
