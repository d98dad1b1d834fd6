//! Label-access guard used during training.
//!
//! Training code never touches raw label volumes. It goes through a
//! [`GuardedDataset`], which exposes only a fixed set of visible classes,
//! maps every other class to background, and counts what was handed out.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ClassId, SliceSample, Volume, BACKGROUND};

/// Per-class counts of label reads served and refused.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessLog {
    /// Number of slice annotations handed out that contained each class.
    pub reads: BTreeMap<ClassId, u64>,
    /// Number of refused requests for hidden classes.
    pub denied: BTreeMap<ClassId, u64>,
}

impl AccessLog {
    pub fn reads_of(&self, class: ClassId) -> u64 {
        self.reads.get(&class).copied().unwrap_or(0)
    }

    pub fn denied_of(&self, class: ClassId) -> u64 {
        self.denied.get(&class).copied().unwrap_or(0)
    }
}

/// One slice that shows at least one visible foreground class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceRef {
    pub volume: usize,
    pub slice: usize,
    pub classes: BTreeSet<ClassId>,
}

pub struct GuardedDataset<'a> {
    volumes: &'a [Volume],
    visible: BTreeSet<ClassId>,
    index: Vec<SliceRef>,
    log: Mutex<AccessLog>,
}

impl<'a> GuardedDataset<'a> {
    pub fn new(volumes: &'a [Volume], visible: BTreeSet<ClassId>) -> Result<Self> {
        if volumes.is_empty() {
            return Err(Error::Sampling("dataset is empty".into()));
        }
        if visible.is_empty() || visible.contains(&BACKGROUND) {
            return Err(Error::config("visible classes must be non-empty foreground ids"));
        }
        let dims = volumes[0].slice_dims();
        if let Some(v) = volumes.iter().find(|v| v.slice_dims() != dims) {
            return Err(Error::shape(format!(
                "volume {} has slices {:?}, expected {dims:?}",
                v.id,
                v.slice_dims()
            )));
        }
        let mut index = Vec::new();
        for (vi, v) in volumes.iter().enumerate() {
            for z in 0..v.depth() {
                let classes: BTreeSet<ClassId> = v
                    .labels
                    .index_axis(ndarray::Axis(0), z)
                    .iter()
                    .copied()
                    .filter(|c| visible.contains(c))
                    .collect();
                if !classes.is_empty() {
                    index.push(SliceRef {
                        volume: vi,
                        slice: z,
                        classes,
                    });
                }
            }
        }
        Ok(GuardedDataset {
            volumes,
            visible,
            index,
            log: Mutex::new(AccessLog::default()),
        })
    }

    pub fn visible(&self) -> &BTreeSet<ClassId> {
        &self.visible
    }

    /// Slices showing at least one visible class. Empty-foreground slices
    /// never appear here.
    pub fn index(&self) -> &[SliceRef] {
        &self.index
    }

    /// `(H, W)` of every slice; volumes of mixed size are rejected at construction.
    pub fn slice_dims(&self) -> (usize, usize) {
        self.volumes[0].slice_dims()
    }

    pub fn n_volumes(&self) -> usize {
        self.volumes.len()
    }

    pub fn volume_id(&self, volume: usize) -> &str {
        &self.volumes[volume].id
    }

    /// The slice with hidden classes relabeled as background.
    pub fn slice(&self, r: &SliceRef) -> SliceSample {
        let mut s = self.volumes[r.volume].slice(r.slice);
        s.multilabel
            .mapv_inplace(|c| if self.visible.contains(&c) { c } else { BACKGROUND });
        let mut log = self.log.lock().expect("access log poisoned");
        for c in s.foreground_classes() {
            *log.reads.entry(c).or_insert(0) += 1;
        }
        s
    }

    /// Binary mask of one class on a slice; refused for hidden classes.
    pub fn class_mask(&self, r: &SliceRef, class: ClassId) -> Result<BinaryMask> {
        let mut log = self.log.lock().expect("access log poisoned");
        if !self.visible.contains(&class) {
            *log.denied.entry(class).or_insert(0) += 1;
            return Err(Error::AccessDenied { class });
        }
        *log.reads.entry(class).or_insert(0) += 1;
        let labels = self.volumes[r.volume].labels.index_axis(ndarray::Axis(0), r.slice);
        BinaryMask::new(labels.mapv(|c| u8::from(c == class)), class)
    }

    pub fn image(&self, r: &SliceRef) -> Array2<f32> {
        self.volumes[r.volume]
            .voxels
            .index_axis(ndarray::Axis(0), r.slice)
            .to_owned()
    }

    pub fn access_log(&self) -> AccessLog {
        self.log.lock().expect("access log poisoned").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;
    use ndarray::Array3;

    fn volume() -> Volume {
        let labels = Array3::from_shape_fn((3, 4, 4), |(z, y, x)| match (z, y, x) {
            (0, _, _) => 0,
            (1, 0, _) => 1,
            (1, 1, _) => 4,
            (2, _, 0) => 4,
            _ => 0,
        });
        Volume::new("v", Array3::zeros((3, 4, 4)), labels, Modality::Synthetic, [1.0; 3]).unwrap()
    }

    #[test]
    fn hides_and_logs() {
        let vols = vec![volume()];
        let g = GuardedDataset::new(&vols, [1, 2, 3].into()).unwrap();
        // Slice 0 is empty and slice 2 only shows a hidden class.
        assert_eq!(g.index().len(), 1);
        let r = g.index()[0].clone();
        assert_eq!(r.classes, BTreeSet::from([1]));
        let s = g.slice(&r);
        assert!(s.multilabel.iter().all(|&c| c != 4));
        assert!(matches!(g.class_mask(&r, 4), Err(Error::AccessDenied { class: 4 })));
        assert_eq!(g.class_mask(&r, 1).unwrap().count(), 4);
        let log = g.access_log();
        assert_eq!(log.reads_of(4), 0);
        assert_eq!(log.denied_of(4), 1);
        assert_eq!(log.reads_of(1), 2);
    }
}
