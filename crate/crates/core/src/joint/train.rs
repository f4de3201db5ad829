use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensornet::{Mode, Optimizer, ParamStore};

use super::config::{JointConfig, TrainConfig};
use super::data::{augment_training, retrieved_instances, Encoder, QuestionBatch};
use super::metadata::MetadataLayout;
use super::model::{HeadOutputs, JointModel, LossBreakdown};
use crate::baseline::rank_by_score;
use crate::corpus::{Dataset, QAPair};
use crate::error::{Error, Result};
use crate::evalkit::Prediction;
use crate::io::{read_json, write_json};
use crate::prepare::PreparedQuestion;
use crate::providers::{ProviderConfig, TfidfModel};

/// Source vocabularies frozen from the training questions and the corpus.
pub fn fit_metadata_layout(train: &Dataset, corpus: &[QAPair], config: &JointConfig) -> Result<MetadataLayout> {
    let candidate: BTreeSet<&str> = train
        .questions
        .iter()
        .flat_map(|q| q.candidates.iter().map(|c| c.source.as_str()))
        .collect();
    let entailed: BTreeSet<&str> = corpus.iter().map(|p| p.source.as_str()).collect();
    MetadataLayout::new(
        candidate.into_iter().map(String::from).collect(),
        entailed.into_iter().map(String::from).collect(),
        config.vocab_size,
        config.meta_dim,
    )
}

/// Retrieved instances plus, optionally, the rank-based synthetic ones.
pub fn training_batch(q: &PreparedQuestion, encoder: &Encoder, augmentation: bool) -> Result<QuestionBatch> {
    let mut instances = retrieved_instances(q);
    if augmentation {
        instances.extend(augment_training(q, encoder.provider)?);
    }
    encoder.encode(q, &instances)
}

pub fn inference_batch(q: &PreparedQuestion, encoder: &Encoder) -> Result<QuestionBatch> {
    encoder.encode(q, &retrieved_instances(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub filter: f64,
    pub pair: f64,
}

/// One pass over `batches` in the given order, one optimizer step per question.
pub fn training_epoch(
    model: &mut JointModel,
    batches: &[QuestionBatch],
    order: &[usize],
    alpha: f64,
    optimizer: &mut Optimizer,
) -> Result<LossBreakdown> {
    let mut total = LossBreakdown::default();
    for &i in order {
        model.zero_grad();
        let l = model.loss_and_backward(&batches[i], alpha, Mode::Train)?;
        if !l.total.is_finite() {
            return Err(Error::Training(format!("non-finite loss on question {}", batches[i].question_id)));
        }
        optimizer.step(model.params_mut());
        total.filter += l.filter;
        total.pair += l.pair;
        total.total += l.total;
        total.filter_terms += l.filter_terms;
        total.pair_terms += l.pair_terms;
    }
    Ok(total)
}

/// Trains for `config.epochs` epochs with a seeded shuffle of question order.
pub fn train(
    model: &mut JointModel,
    batches: &[QuestionBatch],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    let mut optimizer = config.optimizer.build();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let l = training_epoch(model, batches, &order, config.alpha, &mut optimizer)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: l.total,
            filter: l.filter,
            pair: l.pair,
        };
        on_epoch(&stats);
        trace.push(stats);
    }
    Ok(trace)
}

/// Combined decision over entailed answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Mean filter probability per answer.
    pub relevance: Vec<f64>,
    /// Summed pairwise win probability per answer.
    pub scores: Vec<f64>,
    /// Answer indices, best first.
    pub order: Vec<usize>,
}

/// `relevance(i)` is the mean of `f_k(i)`; `s(i) = sum_k sum_{j != i} p_k(i, j)`;
/// ranking by `s` descending, ties by ascending system rank.
pub fn ensemble(outputs: &HeadOutputs, candidates: &[Vec<usize>], system_ranks: &[u32]) -> Ensemble {
    let n = system_ranks.len();
    let mut fsum = vec![0.0; n];
    let mut fcount = vec![0usize; n];
    let mut scores = vec![0.0; n];
    for (k, cands) in candidates.iter().enumerate() {
        for (m, &i) in cands.iter().enumerate() {
            fsum[i] += outputs.filter[k][m];
            fcount[i] += 1;
            for (q, _) in cands.iter().enumerate() {
                if q != m {
                    scores[i] += outputs.pair[k][m][q];
                }
            }
        }
    }
    let relevance = fsum
        .iter()
        .zip(&fcount)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let order = rank_by_score(&scores, system_ranks);
    Ensemble {
        relevance,
        scores,
        order,
    }
}

pub fn predict_batch(model: &JointModel, batch: &QuestionBatch) -> Result<Prediction> {
    let outputs = model.score(batch)?;
    let candidates: Vec<Vec<usize>> = batch.instances.iter().map(|i| i.candidates.clone()).collect();
    let e = ensemble(&outputs, &candidates, &batch.system_ranks);
    Ok(Prediction {
        question_id: batch.question_id.clone(),
        ranking: e.order.iter().map(|&i| batch.answer_ids[i].clone()).collect(),
        relevant: e
            .order
            .iter()
            .filter(|&&i| e.relevance[i] >= 0.5)
            .map(|&i| batch.answer_ids[i].clone())
            .collect(),
        scores: e
            .scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (batch.answer_ids[i].clone(), s))
            .collect(),
    })
}

/// Everything needed to rebuild a trained joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: JointConfig,
    pub train: TrainConfig,
    pub provider: ProviderConfig,
    pub metadata: MetadataLayout,
    pub tfidf: TfidfModel,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(
        model: &JointModel,
        train: TrainConfig,
        provider: ProviderConfig,
        metadata: MetadataLayout,
        tfidf: TfidfModel,
    ) -> Self {
        Self {
            config: model.config.clone(),
            train,
            provider,
            metadata,
            tfidf,
            params: model.export(),
        }
    }

    pub fn model(&self) -> Result<JointModel> {
        let mut model = JointModel::new(self.config.clone(), self.train.seed)?;
        model.import(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}
