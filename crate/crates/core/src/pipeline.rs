//! End-to-end wiring: provider and index construction, feature extraction,
//! training and prediction for both systems.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::baseline::{
    assemble_baseline_features, train_logreg, train_pairwise_hinge, BaselineFeatureConfig, BaselineModel,
    BaselineRanker, FeatureRow, HingeConfig, LogRegConfig,
};
use crate::corpus::{Dataset, QAPair};
use crate::error::{Error, Result};
use tensornet::{grad_check, GradCheckReport, Mode};
use crate::evalkit::Prediction;
use crate::joint::{
    fit_metadata_layout, inference_batch, predict_batch, train, training_batch, Checkpoint, Encoder, EpochStats,
    JointConfig, JointModel, MetadataLayout, QuestionBatch, TrainConfig,
};
use crate::prepare::{prepare_question, PreparedQuestion};
use crate::preprocess::Preprocessor;
use crate::providers::{build_provider, EntailmentProvider, ProviderConfig, TfidfModel};
use crate::retrieval::{Direction, EntailmentIndex, RetrievalConfig};
use crate::synth::SynthConfig;

/// One document per corpus pair: question and answer text.
pub fn corpus_documents(pairs: &[QAPair]) -> Vec<String> {
    pairs
        .iter()
        .map(|p| format!("{} {}", p.question_text, p.answer_text))
        .collect()
}

/// Shared state for scoring questions against a corpus.
pub struct Pipeline {
    pub pre: Preprocessor,
    pub provider_config: ProviderConfig,
    pub provider: Arc<dyn EntailmentProvider>,
    pub index: EntailmentIndex,
    pub retrieval: RetrievalConfig,
}

impl Pipeline {
    pub fn new(
        pre: Preprocessor,
        corpus: Vec<QAPair>,
        provider_config: ProviderConfig,
        retrieval: RetrievalConfig,
        direction: Direction,
    ) -> Result<Self> {
        retrieval.validate()?;
        let provider = build_provider(&provider_config, &corpus_documents(&corpus))?;
        let index = EntailmentIndex::new(corpus, provider.clone()).with_direction(direction);
        Ok(Self {
            pre,
            provider_config,
            provider,
            index,
            retrieval,
        })
    }

    /// TF-IDF model over the corpus for metadata and baseline features.
    pub fn fit_tfidf(&self, vocab_size: usize) -> Result<TfidfModel> {
        TfidfModel::fit(&corpus_documents(self.index.pairs()), vocab_size)
    }

    pub fn prepare(&self, dataset: &Dataset) -> Result<Vec<PreparedQuestion>> {
        dataset
            .questions
            .iter()
            .map(|q| prepare_question(q, &self.pre, &self.index, &self.retrieval))
            .collect()
    }

    fn encoder<'a>(&'a self, config: &JointConfig, layout: &'a MetadataLayout, tfidf: &'a TfidfModel) -> Result<Encoder<'a>> {
        let d = self.provider.dim();
        if d != config.encoder.in_channels || d != config.rqe_dim {
            return Err(Error::Dimension(format!(
                "provider width {d} does not match encoder input {} and RQE width {}",
                config.encoder.in_channels, config.rqe_dim
            )));
        }
        Ok(Encoder {
            provider: self.provider.as_ref(),
            tfidf,
            layout,
            channels: config.encoder.in_channels,
            rqe_dim: config.rqe_dim,
        })
    }
}

/// Fitted feature inputs of the joint model.
pub struct JointInputs {
    pub layout: MetadataLayout,
    pub tfidf: TfidfModel,
}

pub fn fit_joint_inputs(pipeline: &Pipeline, train: &Dataset, config: &JointConfig) -> Result<JointInputs> {
    Ok(JointInputs {
        layout: fit_metadata_layout(train, pipeline.index.pairs(), config)?,
        tfidf: pipeline.fit_tfidf(config.vocab_size)?,
    })
}

pub fn joint_training_batches(
    pipeline: &Pipeline,
    prepared: &[PreparedQuestion],
    config: &JointConfig,
    inputs: &JointInputs,
    augmentation: bool,
) -> Result<Vec<QuestionBatch>> {
    let enc = pipeline.encoder(config, &inputs.layout, &inputs.tfidf)?;
    prepared.iter().map(|q| training_batch(q, &enc, augmentation)).collect()
}

pub fn joint_inference_batches(
    pipeline: &Pipeline,
    prepared: &[PreparedQuestion],
    config: &JointConfig,
    inputs: &JointInputs,
) -> Result<Vec<QuestionBatch>> {
    let enc = pipeline.encoder(config, &inputs.layout, &inputs.tfidf)?;
    prepared.iter().map(|q| inference_batch(q, &enc)).collect()
}

/// Trains a joint model from scratch and packs it into a checkpoint.
pub fn train_joint(
    pipeline: &Pipeline,
    dataset: &Dataset,
    config: &JointConfig,
    train_config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    for q in &dataset.questions {
        q.validate(true)?;
    }
    let inputs = fit_joint_inputs(pipeline, dataset, config)?;
    let prepared = pipeline.prepare(dataset)?;
    let batches = joint_training_batches(pipeline, &prepared, config, &inputs, train_config.augmentation)?;
    let mut model = JointModel::new(config.clone(), train_config.seed)?;
    let trace = train(&mut model, &batches, train_config, on_epoch)?;
    let checkpoint = Checkpoint::new(
        &model,
        train_config.clone(),
        pipeline.provider_config.clone(),
        inputs.layout,
        inputs.tfidf,
    );
    Ok((checkpoint, trace))
}

pub fn predict_joint(pipeline: &Pipeline, checkpoint: &Checkpoint, dataset: &Dataset) -> Result<Vec<Prediction>> {
    let model = checkpoint.model()?;
    let inputs = JointInputs {
        layout: checkpoint.metadata.clone(),
        tfidf: checkpoint.tfidf.clone(),
    };
    let prepared = pipeline.prepare(dataset)?;
    joint_inference_batches(pipeline, &prepared, &model.config, &inputs)?
        .iter()
        .map(|b| predict_batch(&model, b))
        .collect()
}

/// Baseline feature layout with the source vocabulary taken from `train`.
pub fn fit_baseline_features(pipeline: &Pipeline, train: &Dataset, vocab_size: usize) -> BaselineFeatureConfig {
    let sources: BTreeSet<&str> = train
        .questions
        .iter()
        .flat_map(|q| q.candidates.iter().map(|c| c.source.as_str()))
        .collect();
    BaselineFeatureConfig {
        n: pipeline.retrieval.max_candidates,
        threshold: pipeline.retrieval.threshold,
        vocab_size,
        source_vocab: sources.into_iter().map(String::from).collect(),
        dim: pipeline.provider.dim(),
    }
}

pub fn extract_features(
    pipeline: &Pipeline,
    dataset: &Dataset,
    tfidf: &TfidfModel,
    config: &BaselineFeatureConfig,
) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for q in pipeline.prepare(dataset)? {
        for c in &q.candidates {
            rows.push(FeatureRow {
                question_id: q.question_id.clone(),
                answer_id: c.answer.answer_id.clone(),
                label: c.answer.label(),
                reference_rank: c.answer.reference_rank,
                system_rank: c.answer.system_rank,
                features: assemble_baseline_features(c, &q.entailed, tfidf, config, pipeline.provider.as_ref())?,
            });
        }
    }
    Ok(rows)
}

/// Rows grouped by question, in first-seen order.
pub fn group_rows(rows: &[FeatureRow]) -> Vec<Vec<&FeatureRow>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&FeatureRow>> = BTreeMap::new();
    for r in rows {
        let g = groups.entry(&r.question_id).or_default();
        if g.is_empty() {
            order.push(&r.question_id);
        }
        g.push(r);
    }
    order.into_iter().map(|id| groups.remove(id).unwrap_or_default()).collect()
}

pub fn train_baseline(
    rows: &[FeatureRow],
    features: BaselineFeatureConfig,
    tfidf: TfidfModel,
    logreg: &LogRegConfig,
    hinge: Option<&HingeConfig>,
) -> Result<BaselineModel> {
    let labeled: Vec<&FeatureRow> = rows.iter().filter(|r| r.label.is_some()).collect();
    let xs: Vec<Vec<f64>> = labeled.iter().map(|r| r.features.clone()).collect();
    let ys: Vec<bool> = labeled.iter().filter_map(|r| r.label).collect();
    let logistic = train_logreg(&xs, &ys, logreg)?;
    let hinge = match hinge {
        Some(cfg) => {
            let groups: Vec<(Vec<Vec<f64>>, Vec<u32>)> = group_rows(rows)
                .into_iter()
                .map(|g| {
                    let ranked: Vec<&&FeatureRow> = g.iter().filter(|r| r.reference_rank.is_some()).collect();
                    (
                        ranked.iter().map(|r| r.features.clone()).collect(),
                        ranked.iter().filter_map(|r| r.reference_rank).collect(),
                    )
                })
                .collect();
            Some(train_pairwise_hinge(&groups, cfg)?)
        }
        None => None,
    };
    Ok(BaselineModel {
        layout: features.layout(),
        features,
        tfidf,
        logistic,
        hinge,
    })
}

pub fn predict_baseline(model: &BaselineModel, rows: &[FeatureRow], ranker: BaselineRanker) -> Result<Vec<Prediction>> {
    group_rows(rows).iter().map(|g| model.predict(g, ranker)).collect()
}

/// Scaled-down joint model and one augmented synthetic training question.
pub fn joint_gradcheck_fixture(seed: u64) -> Result<(JointModel, QuestionBatch)> {
    let data = SynthConfig {
        questions: 5,
        seed,
        ..SynthConfig::default()
    }
    .generate()?;
    let config = JointConfig::scaled_down();
    let provider = ProviderConfig {
        dim: config.encoder.in_channels,
        seed,
        ..ProviderConfig::default()
    };
    let pipeline = Pipeline::new(
        Preprocessor::default(),
        data.corpus,
        provider,
        RetrievalConfig::default(),
        Direction::default(),
    )?;
    let inputs = fit_joint_inputs(&pipeline, &data.train, &config)?;
    let prepared = pipeline.prepare(&data.train)?;
    let batch = joint_training_batches(&pipeline, &prepared[..1], &config, &inputs, true)?.remove(0);
    Ok((JointModel::new(config, seed)?, batch))
}

/// Finite-difference check of every parameter of the scaled-down joint model
/// (encoder and both heads) on [`joint_gradcheck_fixture`].
pub fn joint_gradcheck(seed: u64, alpha: f64, epsilon: f64) -> Result<GradCheckReport> {
    let (mut model, batch) = joint_gradcheck_fixture(seed)?;
    model.loss_and_backward(&batch, alpha, Mode::Train)?;
    Ok(grad_check(
        &mut model,
        |m| {
            m.loss_and_backward(&batch, alpha, Mode::Train)
                .map(|l| l.total)
                .map_err(|e| tensornet::TensorError::NonFinite(e.to_string()))
        },
        epsilon,
    )?)
}
