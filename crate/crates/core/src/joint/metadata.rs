use serde::{Deserialize, Serialize};

use crate::baseline::one_hot;
use crate::error::{Error, Result};
use crate::providers::TfidfModel;

/// `[candidate source K1][entailed source K2][candidate length][entailed length]
/// [system rank][TF-IDF V][zero padding]`, `M` values in total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataLayout {
    pub candidate_sources: Vec<String>,
    pub entailed_sources: Vec<String>,
    pub vocab_size: usize,
    pub len: usize,
}

impl MetadataLayout {
    pub fn new(
        candidate_sources: Vec<String>,
        entailed_sources: Vec<String>,
        vocab_size: usize,
        len: usize,
    ) -> Result<Self> {
        let used = candidate_sources.len() + entailed_sources.len() + 3 + vocab_size;
        if used > len {
            return Err(Error::Dimension(format!(
                "metadata needs {used} slots ({} + {} sources, 3 counts, {vocab_size} TF-IDF) but M is {len}",
                candidate_sources.len(),
                entailed_sources.len()
            )));
        }
        Ok(Self {
            candidate_sources,
            entailed_sources,
            vocab_size,
            len,
        })
    }

    pub fn padding(&self) -> usize {
        self.len - self.candidate_sources.len() - self.entailed_sources.len() - 3 - self.vocab_size
    }
}

/// Metadata describing one candidate answer seen through one entailed answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetadataInput<'a> {
    pub candidate_source: &'a str,
    pub entailed_source: &'a str,
    /// Sentence counts.
    pub candidate_len: usize,
    pub entailed_len: usize,
    pub system_rank: u32,
    /// Candidate answer text for the TF-IDF block.
    pub candidate_text: &'a str,
}

pub fn build_metadata(input: &MetadataInput, tfidf: &TfidfModel, layout: &MetadataLayout) -> Result<Vec<f64>> {
    if tfidf.vocab_size() != layout.vocab_size {
        return Err(Error::Dimension(format!(
            "TF-IDF width {} but metadata layout expects {}",
            tfidf.vocab_size(),
            layout.vocab_size
        )));
    }
    let mut out = Vec::with_capacity(layout.len);
    out.extend(one_hot(&layout.candidate_sources, input.candidate_source));
    out.extend(one_hot(&layout.entailed_sources, input.entailed_source));
    out.push(input.candidate_len as f64);
    out.push(input.entailed_len as f64);
    out.push(input.system_rank as f64);
    out.extend(tfidf.transform(input.candidate_text));
    out.resize(layout.len, 0.0);
    Ok(out)
}
