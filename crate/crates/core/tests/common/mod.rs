#![allow(dead_code)]

use medrank::joint::{EncodedInstance, JointConfig, QuestionBatch, TrainConfig};
use medrank::pipeline::Pipeline;
use medrank::preprocess::Preprocessor;
use medrank::providers::ProviderConfig;
use medrank::retrieval::{Direction, RetrievalConfig};
use medrank::synth::{SynthConfig, SynthOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensornet::{AdamConfig, OptimizerConfig, Tensor};

pub fn synth(questions: usize, seed: u64) -> SynthOutput {
    SynthConfig {
        questions,
        seed,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap()
}

pub fn scaled_pipeline(data: &SynthOutput, retrieval: RetrievalConfig) -> Pipeline {
    let provider = ProviderConfig {
        dim: JointConfig::scaled_down().encoder.in_channels,
        seed: 7,
        ..ProviderConfig::default()
    };
    Pipeline::new(
        Preprocessor::default(),
        data.corpus.clone(),
        provider,
        retrieval,
        Direction::default(),
    )
    .unwrap()
}

pub fn adam(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        optimizer: OptimizerConfig::Adam(AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        }),
        ..TrainConfig::default()
    }
}

/// One instance over `labels.len()` candidates with random inputs; ranks follow list order.
pub fn random_batch(labels: &[bool], instances: usize, seed: u64) -> QuestionBatch {
    let cfg = JointConfig::scaled_down();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = labels.len();
    let mut vec = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let encoded = (0..instances)
        .map(|_| EncodedInstance {
            candidates: (0..n).collect(),
            maps: (0..n)
                .map(|i| {
                    let (a, c) = (1 + i % 2, 1 + i % 3);
                    Tensor::new(vec![cfg.encoder.in_channels, a, c], vec(cfg.encoder.in_channels * a * c)).unwrap()
                })
                .collect(),
            rqe: vec(cfg.rqe_dim),
            meta: (0..n).map(|_| vec(cfg.meta_dim)).collect(),
        })
        .collect();
    QuestionBatch {
        question_id: "q".into(),
        answer_ids: (0..n).map(|i| format!("a{i}")).collect(),
        labels: labels.iter().map(|&l| Some(l)).collect(),
        reference_ranks: (1..=n as u32).map(Some).collect(),
        system_ranks: (1..=n as u32).rev().collect(),
        instances: encoded,
    }
}
