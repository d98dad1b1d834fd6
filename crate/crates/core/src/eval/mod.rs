//! Dice coefficient, volumetric evaluation and cross-validation.

pub mod cv;
pub mod metrics;
pub mod segmentor;

pub use cv::{cross_validate, fold_split, CvOptions, FoldResult, MetricsReport, OrganResult};
pub use metrics::{dice_coefficient, evaluate_volume, volume_overlap, Overlap};
pub use segmentor::{
    EmptySegmentor, FixedFactory, ModelSegmentor, SegmentRequest, Segmentor, SegmentorFactory,
    TrainerFactory, TruthEcho,
};
