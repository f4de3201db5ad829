use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 2000;

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bag-of-words TF-IDF model with a frozen vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "TfidfFile", into = "TfidfFile")]
pub struct TfidfModel {
    vocabulary: Vec<String>,
    idf: Vec<f64>,
    vocab_size: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TfidfFile {
    vocabulary: Vec<String>,
    idf: Vec<f64>,
    #[serde(rename = "V")]
    vocab_size: usize,
}

impl From<TfidfFile> for TfidfModel {
    fn from(f: TfidfFile) -> Self {
        let index = f
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            vocabulary: f.vocabulary,
            idf: f.idf,
            vocab_size: f.vocab_size,
            index,
        }
    }
}

impl From<TfidfModel> for TfidfFile {
    fn from(m: TfidfModel) -> Self {
        Self {
            vocabulary: m.vocabulary,
            idf: m.idf,
            vocab_size: m.vocab_size,
        }
    }
}

impl PartialEq for TfidfModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocabulary == other.vocabulary
            && self.idf == other.idf
            && self.vocab_size == other.vocab_size
    }
}

impl TfidfModel {
    /// Keeps the `vocab_size` terms with the highest document frequency (ties
    /// broken lexicographically) and sets `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
    pub fn fit<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("TF-IDF corpus"));
        }
        if vocab_size == 0 {
            return Err(Error::Config("TF-IDF vocabulary size must be >= 1".into()));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let mut terms = tokenize(doc.as_ref());
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
        // BTreeMap order is lexicographic and the sort is stable
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        ranked.truncate(vocab_size);
        let n = corpus.len() as f64;
        let idf = ranked
            .iter()
            .map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0)
            .collect();
        let vocabulary: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
        Ok(TfidfFile {
            vocabulary,
            idf,
            vocab_size,
        }
        .into())
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Configured size `V`; transform outputs always have this length.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Sparse `(index, weight)` entries of the L2-normalized vector, sorted by index.
    pub fn transform_sparse(&self, text: &str) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(i) = self.term_index(&tok) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(i, c)| (i, c * self.idf[i]))
            .collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            entries.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        entries
    }

    /// Dense length-`V` vector: raw term count times idf, then L2-normalized.
    /// Text with no in-vocabulary terms maps to the zero vector.
    pub fn transform(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size];
        for (i, v) in self.transform_sparse(text) {
            out[i] = v;
        }
        out
    }
}

/// Dot product of two index-sorted sparse vectors.
pub fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}
