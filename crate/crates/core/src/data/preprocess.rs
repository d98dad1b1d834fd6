use ndarray::Array3;

use crate::error::Result;
use crate::types::{ClassId, Modality, Volume};

pub const CT_WINDOW: (f32, f32) = (-125.0, 275.0);

/// Clamp Hounsfield units to the abdominal window and map it onto `[0, 1]`.
pub fn preprocess_ct(raw: &Array3<f32>) -> Array3<f32> {
    let (lo, hi) = CT_WINDOW;
    raw.mapv(|v| (v.clamp(lo, hi) - lo) / (hi - lo))
}

/// Per-volume min-max normalization. A constant volume maps to zeros.
pub fn preprocess_mr(raw: &Array3<f32>) -> Array3<f32> {
    let (min, max) = raw
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = max - min;
    if !range.is_finite() || range <= 0.0 {
        return Array3::zeros(raw.dim());
    }
    raw.mapv(|v| ((v - min) / range).clamp(0.0, 1.0))
}

/// Builds a [`Volume`] from raw scanner intensities, normalizing according
/// to the modality. Synthetic data is only clamped.
pub fn ingest(
    id: impl Into<String>,
    raw: &Array3<f32>,
    labels: Array3<ClassId>,
    modality: Modality,
    spacing: [f32; 3],
) -> Result<Volume> {
    let voxels = match modality {
        Modality::Ct => preprocess_ct(raw),
        Modality::Mr => preprocess_mr(raw),
        Modality::Synthetic => raw.mapv(|v| v.clamp(0.0, 1.0)),
    };
    Volume::new(id, voxels, labels, modality, spacing)
}
