//! Episode sampling behind a label-access guard, and the training loop.

pub mod guard;
pub mod sampler;
pub mod train;

pub use guard::{AccessLog, GuardedDataset, SliceRef};
pub use sampler::{sample_episode, Episode, EpisodeSampler};
pub use train::{episode_objective, train, LossRecord, TrainOptions, TrainState};
