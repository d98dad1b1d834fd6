use ndarray::Axis;

use super::segmentor::{SegmentRequest, Segmentor};
use crate::data::SliceMatchPlan;
use crate::error::{Error, Result};
use crate::types::{BinaryMask, ClassId, Volume};

/// `2|X∩Y| / (|X|+|Y|)`, with two empty masks scoring 1.
pub fn dice_coefficient(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let overlap = Overlap::of(pred, truth);
    Ok(overlap.dice())
}

/// Voxel counts accumulated over slices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl Overlap {
    pub fn of(pred: &BinaryMask, truth: &BinaryMask) -> Self {
        let mut o = Overlap::default();
        for (&p, &t) in pred.mask().iter().zip(truth.mask().iter()) {
            o.predicted += p as u64;
            o.truth += t as u64;
            o.intersection += (p & t) as u64;
        }
        o
    }

    pub fn add(&mut self, other: Overlap) {
        self.intersection += other.intersection;
        self.predicted += other.predicted;
        self.truth += other.truth;
    }

    pub fn dice(&self) -> f64 {
        let denom = self.predicted + self.truth;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }
}

/// Segments every planned query slice with its matched support slice and
/// returns the aggregated voxel overlap.
pub fn volume_overlap(
    segmentor: &dyn Segmentor,
    support: &Volume,
    query: &Volume,
    class_id: ClassId,
    plan: &SliceMatchPlan,
) -> Result<Overlap> {
    if plan.class_id != class_id {
        return Err(Error::Eval(format!(
            "plan built for class {} used for class {class_id}",
            plan.class_id
        )));
    }
    let mut total = Overlap::default();
    for (qz, sz) in plan.pairs() {
        if qz >= query.depth() || sz >= support.depth() {
            return Err(Error::Eval(format!(
                "plan pairs query slice {qz} with support slice {sz}, out of range"
            )));
        }
        let support_image = support.voxels.index_axis(Axis(0), sz).to_owned();
        let support_mask = BinaryMask::from_labels(support.labels.index_axis(Axis(0), sz), class_id)?;
        let query_image = query.voxels.index_axis(Axis(0), qz).to_owned();
        let truth = BinaryMask::from_labels(query.labels.index_axis(Axis(0), qz), class_id)?;
        let pred = segmentor.segment(&SegmentRequest {
            support_image: &support_image,
            support_mask: &support_mask,
            query_image: &query_image,
            query_volume: &query.id,
            query_slice: qz,
        })?;
        if pred.dim() != truth.dim() {
            return Err(Error::shape("segmentor returned a mask of the wrong size"));
        }
        total.add(Overlap::of(&pred, &truth));
    }
    Ok(total)
}

/// Volumetric Dice of one query volume.
pub fn evaluate_volume(
    segmentor: &dyn Segmentor,
    support: &Volume,
    query: &Volume,
    class_id: ClassId,
    plan: &SliceMatchPlan,
) -> Result<f64> {
    volume_overlap(segmentor, support, query, class_id, plan).map(|o| o.dice())
}
