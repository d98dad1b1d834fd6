//! Spatial correlation (non-local attention) and the modules built on it:
//! long/short-range partitions, the efficient global-correlation (GC)
//! module and the spatial squeeze-and-excitation (sSE) gate.

pub mod flops;
pub mod gc;
pub mod partition;
pub mod spatial;
pub mod sse;

pub use crate::tensor::FeatureMap;
pub use gc::{efficient_gc, efficient_gc_staged, GcCache, GcGrads, GcParams, GcStages};
pub use partition::{
    long_range_merge, long_range_rearrange, short_range_merge, short_range_rearrange,
    PartitionSpec,
};
pub use spatial::{
    spatial_correlation, spatial_correlation_with_attention, ScCache, SpatialCorrelationGrads,
    SpatialCorrelationParams,
};
pub use sse::{sse_attention, SqueezeWeights};
