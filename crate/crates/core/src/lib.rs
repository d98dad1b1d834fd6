//! Few-shot organ segmentation with a dual-branch support/query network.
//!
//! The query branch is conditioned on an annotated support slice through
//! spatial squeeze-and-excitation gates and, at the shallow scales, an
//! efficient global-correlation module that factorizes full-map attention
//! into a strided (long-range) stage followed by a blocked (short-range)
//! stage. Training is episodic and mixes a Dice + cross-entropy objective
//! with a hinge embedding loss that pulls same-organ support/query features
//! together.
//!
//! Module map:
//! - [`types`], [`config`]: domain values, label binarization, run configuration.
//! - [`tensor`], [`layers`]: dense feature maps and hand-differentiated layers.
//! - [`correlation`]: spatial correlation, long/short-range partitions, GC and sSE.
//! - [`network`]: parameters, the dual-branch forward/backward, checkpoints.
//! - [`losses`]: Dice, BCE, combined and discriminative-embedding losses.
//! - [`episodic`]: episode sampler, SGD training loop.
//! - [`data`]: phantom generator, preprocessing, volume container, slice matching.
//! - [`eval`]: Dice coefficient, volumetric evaluation, cross-validation reports.
//! - [`oracle`]: slow reference implementations used by tests and `oracle-check`.

pub mod config;
pub mod correlation;
pub mod data;
pub mod episodic;
pub mod error;
pub mod eval;
pub mod io;
pub mod layers;
pub mod losses;
pub mod network;
pub mod oracle;
pub mod tensor;
pub mod types;

pub use config::{Arm, EmbeddingMode, RunConfig};
pub use correlation::{FeatureMap, PartitionSpec, SpatialCorrelationParams};
pub use error::{Error, Result};
pub use network::{ForwardOutput, Model, ModelParams, Network};
pub use tensor::Real;
pub use types::{BinaryMask, ClassId, ClassSets, Modality, SliceSample, Volume};
