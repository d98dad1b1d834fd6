use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;

use crate::config::RunConfig;
use crate::episodic::{train, GuardedDataset, TrainOptions};
use crate::error::{Error, Result};
use crate::network::{predict_mask, Model, Network};
use crate::types::{BinaryMask, ClassSets, Volume};

/// Inputs for segmenting one query slice.
pub struct SegmentRequest<'a> {
    pub support_image: &'a Array2<f32>,
    pub support_mask: &'a BinaryMask,
    pub query_image: &'a Array2<f32>,
    pub query_volume: &'a str,
    pub query_slice: usize,
}

pub trait Segmentor: Send + Sync {
    /// Binary prediction for the class of `req.support_mask`.
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<BinaryMask>;
}

/// A trained network thresholded at `threshold`.
pub struct ModelSegmentor {
    pub model: Model<f32>,
    pub threshold: f64,
}

impl Segmentor for ModelSegmentor {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<BinaryMask> {
        let out = self
            .model
            .forward(req.support_image, req.support_mask, req.query_image)?;
        predict_mask(&out.logits, self.threshold, req.support_mask.class_id())
    }
}

/// Test stub that returns the ground-truth mask of the query slice.
pub struct TruthEcho {
    volumes: HashMap<String, Volume>,
}

impl TruthEcho {
    pub fn new(volumes: &[Volume]) -> Self {
        TruthEcho {
            volumes: volumes.iter().map(|v| (v.id.clone(), v.clone())).collect(),
        }
    }
}

impl Segmentor for TruthEcho {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<BinaryMask> {
        let v = self
            .volumes
            .get(req.query_volume)
            .ok_or_else(|| Error::Eval(format!("unknown volume {}", req.query_volume)))?;
        let labels = v.labels.index_axis(ndarray::Axis(0), req.query_slice);
        BinaryMask::from_labels(labels, req.support_mask.class_id())
    }
}

/// Test stub that never predicts foreground.
pub struct EmptySegmentor;

impl Segmentor for EmptySegmentor {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<BinaryMask> {
        BinaryMask::empty(req.query_image.dim(), req.support_mask.class_id())
    }
}

/// Produces a segmentor from the training split of one fold.
pub trait SegmentorFactory: Sync {
    fn build(
        &self,
        train_data: &GuardedDataset<'_>,
        cfg: &RunConfig,
        classes: &ClassSets,
    ) -> Result<Box<dyn Segmentor>>;
}

/// Trains a fresh network per fold.
#[derive(Debug, Default, Clone)]
pub struct TrainerFactory {
    pub options: TrainOptions,
}

impl SegmentorFactory for TrainerFactory {
    fn build(
        &self,
        train_data: &GuardedDataset<'_>,
        cfg: &RunConfig,
        classes: &ClassSets,
    ) -> Result<Box<dyn Segmentor>> {
        let state = train(train_data, cfg, classes, &self.options)?;
        let model = Model::new(Network::from_config(cfg)?, state.params)?;
        Ok(Box::new(ModelSegmentor {
            model,
            threshold: cfg.threshold,
        }))
    }
}

/// Ignores the training data and returns a fixed segmentor.
#[derive(Clone)]
pub struct FixedFactory(pub Arc<dyn Segmentor>);

struct Shared(Arc<dyn Segmentor>);

impl Segmentor for Shared {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<BinaryMask> {
        self.0.segment(req)
    }
}

impl SegmentorFactory for FixedFactory {
    fn build(&self, _: &GuardedDataset<'_>, _: &RunConfig, _: &ClassSets) -> Result<Box<dyn Segmentor>> {
        Ok(Box::new(Shared(Arc::clone(&self.0))))
    }
}
