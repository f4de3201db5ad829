use tensornet::Tensor;

use super::metadata::{build_metadata, MetadataInput, MetadataLayout};
use crate::error::{Error, Result};
use crate::prepare::PreparedQuestion;
use crate::preprocess::SentenceList;
use crate::providers::{EntailmentProvider, TfidfModel};

/// `[D, a, c]` tensor whose cell `(., i, j)` is the NLI embedding of entailed
/// sentence `i` (premise) against candidate sentence `j`.
pub fn build_pair_tensor(
    entailed: &[String],
    candidate: &[String],
    provider: &dyn EntailmentProvider,
    channels: usize,
) -> Result<Tensor> {
    let (a, c) = (entailed.len(), candidate.len());
    if a == 0 || c == 0 {
        return Err(Error::Empty("sentence list for the NLI tensor"));
    }
    if provider.dim() != channels {
        return Err(Error::Dimension(format!(
            "provider embeddings have width {} but the encoder takes {channels} channels",
            provider.dim()
        )));
    }
    let plane = a * c;
    let mut data = vec![0.0; channels * plane];
    for (i, p) in entailed.iter().enumerate() {
        for (j, h) in candidate.iter().enumerate() {
            let emb = provider.nli(p, h)?.embedding;
            if emb.len() != channels {
                return Err(Error::Dimension(format!("NLI embedding has length {}", emb.len())));
            }
            for (d, v) in emb.into_iter().enumerate() {
                data[d * plane + i * c + j] = v;
            }
        }
    }
    Ok(Tensor::new(vec![channels, a, c], data)?)
}

/// An entailed answer paired with the candidates it is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sentences: SentenceList,
    pub source: String,
    pub rqe_score: f64,
    pub rqe_embedding: Vec<f64>,
    /// Indices into the question's candidates.
    pub candidates: Vec<usize>,
    pub synthetic: bool,
}

/// One instance per retrieved pair, each against every candidate.
pub fn retrieved_instances(q: &PreparedQuestion) -> Vec<Instance> {
    let all: Vec<usize> = (0..q.candidates.len()).collect();
    q.entailed
        .iter()
        .map(|e| Instance {
            sentences: e.sentences.clone(),
            source: e.hit.pair.source.clone(),
            rqe_score: e.hit.score,
            rqe_embedding: e.hit.embedding.clone(),
            candidates: all.clone(),
            synthetic: false,
        })
        .collect()
}

/// Extra instances that use each ranked candidate as the entailed answer for
/// the candidates ranked strictly below it. They carry RQE score 1 and the
/// embedding of the question against itself.
pub fn augment_training(q: &PreparedQuestion, provider: &dyn EntailmentProvider) -> Result<Vec<Instance>> {
    let mut ranked: Vec<(u32, usize)> = q
        .candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.answer.reference_rank.map(|r| (r, i)))
        .collect();
    ranked.sort_unstable();
    if ranked.len() < 2 {
        return Ok(Vec::new());
    }
    let self_embedding = provider.rqe(&q.text, &q.text)?.embedding;
    let mut out = Vec::new();
    for (pos, &(rank, idx)) in ranked.iter().enumerate() {
        let lower: Vec<usize> = ranked[pos + 1..]
            .iter()
            .filter(|(r, _)| *r > rank)
            .map(|&(_, i)| i)
            .collect();
        if lower.is_empty() {
            continue;
        }
        let c = &q.candidates[idx];
        out.push(Instance {
            sentences: c.sentences.clone(),
            source: c.answer.source.clone(),
            rqe_score: 1.0,
            rqe_embedding: self_embedding.clone(),
            candidates: lower,
            synthetic: true,
        });
    }
    Ok(out)
}

/// Model-ready tensors of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInstance {
    pub candidates: Vec<usize>,
    /// One NLI tensor per candidate.
    pub maps: Vec<Tensor>,
    pub rqe: Vec<f64>,
    /// One metadata vector per candidate.
    pub meta: Vec<Vec<f64>>,
}

/// Everything the model needs for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionBatch {
    pub question_id: String,
    pub answer_ids: Vec<String>,
    pub labels: Vec<Option<bool>>,
    pub reference_ranks: Vec<Option<u32>>,
    pub system_ranks: Vec<u32>,
    pub instances: Vec<EncodedInstance>,
}

impl QuestionBatch {
    /// Copy with instance `k` repeated at the end.
    pub fn with_duplicate(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.instances.push(self.instances[k].clone());
        out
    }
}

/// Feature inputs shared by every batch a model sees.
pub struct Encoder<'a> {
    pub provider: &'a dyn EntailmentProvider,
    pub tfidf: &'a TfidfModel,
    pub layout: &'a MetadataLayout,
    pub channels: usize,
    pub rqe_dim: usize,
}

impl Encoder<'_> {
    pub fn encode(&self, q: &PreparedQuestion, instances: &[Instance]) -> Result<QuestionBatch> {
        let mut encoded = Vec::with_capacity(instances.len());
        for inst in instances {
            if inst.rqe_embedding.len() != self.rqe_dim {
                return Err(Error::Dimension(format!(
                    "RQE embedding has length {}, expected {}",
                    inst.rqe_embedding.len(),
                    self.rqe_dim
                )));
            }
            let mut maps = Vec::with_capacity(inst.candidates.len());
            let mut meta = Vec::with_capacity(inst.candidates.len());
            for &i in &inst.candidates {
                let c = &q.candidates[i];
                maps.push(build_pair_tensor(&inst.sentences, &c.sentences, self.provider, self.channels)?);
                let input = MetadataInput {
                    candidate_source: &c.answer.source,
                    entailed_source: &inst.source,
                    candidate_len: c.sentences.len(),
                    entailed_len: inst.sentences.len(),
                    system_rank: c.answer.system_rank,
                    candidate_text: &c.sentences.join(),
                };
                meta.push(build_metadata(&input, self.tfidf, self.layout)?);
            }
            encoded.push(EncodedInstance {
                candidates: inst.candidates.clone(),
                maps,
                rqe: inst.rqe_embedding.clone(),
                meta,
            });
        }
        Ok(QuestionBatch {
            question_id: q.question_id.clone(),
            answer_ids: q.candidates.iter().map(|c| c.answer.answer_id.clone()).collect(),
            labels: q.candidates.iter().map(|c| c.answer.label()).collect(),
            reference_ranks: q.candidates.iter().map(|c| c.answer.reference_rank).collect(),
            system_ranks: q.candidates.iter().map(|c| c.answer.system_rank).collect(),
            instances: encoded,
        })
    }
}
