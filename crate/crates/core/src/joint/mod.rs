//! Multi-task filter and pairwise ranker over joint NLI, RQE and metadata
//! embeddings.

mod config;
mod data;
mod metadata;
mod model;
mod train;

pub use config::{ConvEncoderConfig, ConvLayerSpec, HeadConfig, JointConfig, TrainConfig};
pub use data::{
    augment_training, build_pair_tensor, retrieved_instances, EncodedInstance, Encoder, Instance,
    QuestionBatch,
};
pub use metadata::{build_metadata, MetadataInput, MetadataLayout};
pub use model::{build_encoder, build_head, HeadOutputs, JointModel, LossBreakdown};
pub use train::{
    ensemble, fit_metadata_layout, inference_batch, predict_batch, train, training_batch,
    training_epoch, Checkpoint, Ensemble, EpochStats,
};
