//! Discriminative Siamese backend: a linear trunk with length normalization and a
//! two-branch quadratic head, trained end to end on pairwise trials.

mod adam;
mod grad;
mod loss;
mod model;
mod sampler;
mod train;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use grad::{batch_loss, grad, Gradients};
pub use loss::{loss, LossConfig, LossKind, Scored, LOG_CLAMP};
pub use model::{
    forward, forward_md, init_from_generative, init_mahalanobis, init_random, restrict, to_mahalanobis, Head,
    Param, RestrictMode, SiameseModel, Variant,
};
pub use sampler::{sample_minibatch, Pair, PairSampler};
pub use train::{history_csv, split_speakers, train, EpochRecord, TrainConfig, TrainOutcome};
