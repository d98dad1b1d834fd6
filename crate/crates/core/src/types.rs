//! Domain values shared across the crate: volumes, slices, binary masks and
//! the train/test class split.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer organ label. `0` is background.
pub type ClassId = u8;

pub const BACKGROUND: ClassId = 0;
pub const LIVER: ClassId = 1;
pub const SPLEEN: ClassId = 2;
pub const LEFT_KIDNEY: ClassId = 3;
pub const RIGHT_KIDNEY: ClassId = 4;

/// The four foreground organs in report column order.
pub const ORGANS: [ClassId; 4] = [LIVER, SPLEEN, LEFT_KIDNEY, RIGHT_KIDNEY];

pub fn organ_name(class: ClassId) -> &'static str {
    match class {
        BACKGROUND => "Background",
        LIVER => "Liver",
        SPLEEN => "Spleen",
        LEFT_KIDNEY => "Left Kidney",
        RIGHT_KIDNEY => "Right Kidney",
        _ => "Unknown",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    #[serde(rename = "MR")]
    Mr,
    #[serde(rename = "CT")]
    Ct,
    Synthetic,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Mr => "MR",
            Modality::Ct => "CT",
            Modality::Synthetic => "SYNTHETIC",
        })
    }
}

/// A 3D scan with an aligned multi-class label volume, both indexed `[z, y, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub id: String,
    pub voxels: Array3<f32>,
    pub labels: Array3<ClassId>,
    pub modality: Modality,
    pub spacing: [f32; 3],
}

impl Volume {
    pub fn new(
        id: impl Into<String>,
        voxels: Array3<f32>,
        labels: Array3<ClassId>,
        modality: Modality,
        spacing: [f32; 3],
    ) -> Result<Self> {
        if voxels.dim() != labels.dim() {
            return Err(Error::shape(format!(
                "voxels {:?} vs labels {:?}",
                voxels.dim(),
                labels.dim()
            )));
        }
        if let Some(v) = voxels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Label(format!(
                "intensity {v} outside [0,1]; preprocess before constructing a volume"
            )));
        }
        Ok(Volume {
            id: id.into(),
            voxels,
            labels,
            modality,
            spacing,
        })
    }

    pub fn depth(&self) -> usize {
        self.voxels.dim().0
    }

    pub fn slice_dims(&self) -> (usize, usize) {
        let (_, h, w) = self.voxels.dim();
        (h, w)
    }

    pub fn slice(&self, z: usize) -> SliceSample {
        SliceSample {
            image: self.voxels.index_axis(Axis(0), z).to_owned(),
            multilabel: self.labels.index_axis(Axis(0), z).to_owned(),
            source_volume: self.id.clone(),
            slice_index: z,
        }
    }

    /// Label ids present anywhere in the volume, background included.
    pub fn label_set(&self) -> BTreeSet<ClassId> {
        self.labels.iter().copied().collect()
    }

    pub fn slice_contains(&self, z: usize, class: ClassId) -> bool {
        self.labels.index_axis(Axis(0), z).iter().any(|&l| l == class)
    }
}

/// One axial slice and its multi-class annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image: Array2<f32>,
    pub multilabel: Array2<ClassId>,
    pub source_volume: String,
    pub slice_index: usize,
}

impl SliceSample {
    pub fn foreground_classes(&self) -> BTreeSet<ClassId> {
        self.multilabel
            .iter()
            .copied()
            .filter(|&c| c != BACKGROUND)
            .collect()
    }
}

/// Indicator mask of one foreground class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    mask: Array2<u8>,
    class_id: ClassId,
}

impl BinaryMask {
    pub fn new(mask: Array2<u8>, class_id: ClassId) -> Result<Self> {
        if class_id == BACKGROUND {
            return Err(Error::Label("binary mask class id must be >= 1".into()));
        }
        if mask.iter().any(|&v| v > 1) {
            return Err(Error::Label("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { mask, class_id })
    }

    /// Indicator of `class` in a label slice.
    pub fn from_labels(labels: ArrayView2<'_, ClassId>, class: ClassId) -> Result<Self> {
        BinaryMask::new(labels.mapv(|l| u8::from(l == class)), class)
    }

    pub fn empty(dim: (usize, usize), class_id: ClassId) -> Result<Self> {
        BinaryMask::new(Array2::zeros(dim), class_id)
    }

    pub fn mask(&self) -> &Array2<u8> {
        &self.mask
    }

    pub fn class_id(&self) -> ClassId {
        self.class_id
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn to_real<T: crate::tensor::Real>(&self) -> Array2<T> {
        self.mask
            .mapv(|v| if v == 1 { T::one() } else { T::zero() })
    }
}

/// One mask per foreground class present in the slice, ordered by class id.
/// An all-background slice yields an empty list.
pub fn binarize_labels(sample: &SliceSample) -> Vec<BinaryMask> {
    sample
        .foreground_classes()
        .into_iter()
        .map(|c| {
            BinaryMask::from_labels(sample.multilabel.view(), c)
                .expect("foreground class ids are nonzero")
        })
        .collect()
}

/// Inverse of [`binarize_labels`]: paints each mask's class id onto a
/// background canvas. Fails if two masks claim the same pixel.
pub fn reconstruct_multilabel(
    dim: (usize, usize),
    masks: &[BinaryMask],
) -> Result<Array2<ClassId>> {
    let mut out = Array2::from_elem(dim, BACKGROUND);
    for m in masks {
        if m.dim() != dim {
            return Err(Error::shape(format!("mask {:?} vs {:?}", m.dim(), dim)));
        }
        for (o, &v) in out.iter_mut().zip(m.mask.iter()) {
            if v == 1 {
                if *o != BACKGROUND {
                    return Err(Error::Label(format!(
                        "classes {} and {} overlap",
                        *o, m.class_id
                    )));
                }
                *o = m.class_id;
            }
        }
    }
    Ok(out)
}

/// Disjoint foreground class sets for episodic training and few-shot testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSets {
    pub train_classes: BTreeSet<ClassId>,
    pub test_classes: BTreeSet<ClassId>,
}

impl ClassSets {
    pub fn new(
        train: impl IntoIterator<Item = ClassId>,
        test: impl IntoIterator<Item = ClassId>,
    ) -> Self {
        ClassSets {
            train_classes: train.into_iter().collect(),
            test_classes: test.into_iter().collect(),
        }
    }

    /// Leave-one-organ-out split over the four phantom organs.
    pub fn leave_one_out(held_out: ClassId) -> Self {
        ClassSets::new(
            ORGANS.iter().copied().filter(|&c| c != held_out),
            [held_out],
        )
    }
}

pub fn validate_split(classes: &ClassSets) -> Result<()> {
    if classes.train_classes.is_empty() {
        return Err(Error::Split("empty train class set".into()));
    }
    if classes.test_classes.is_empty() {
        return Err(Error::Split("empty test class set".into()));
    }
    for set in [&classes.train_classes, &classes.test_classes] {
        if set.contains(&BACKGROUND) {
            return Err(Error::Split(
                "class 0 is background and cannot be a foreground class".into(),
            ));
        }
    }
    let overlap: Vec<String> = classes
        .train_classes
        .intersection(&classes.test_classes)
        .map(|c| c.to_string())
        .collect();
    match overlap.len() {
        0 => Ok(()),
        1 => Err(Error::Split(format!("class {} in both splits", overlap[0]))),
        _ => Err(Error::Split(format!(
            "classes {} in both splits",
            overlap.join(", ")
        ))),
    }
}
