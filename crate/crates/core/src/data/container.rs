//! Directory-per-volume container:
//!
//! ```text
//! <dir>/volume.json   metadata (id, dims [D,H,W], dtype, modality, ...)
//! <dir>/image.raw     little-endian f32, D·H·W, slice-major
//! <dir>/labels.raw    u8 class ids, same order
//! ```
//!
//! A dataset is a directory of such volumes plus `dataset.json` listing them.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::preprocess::ingest;
use crate::error::{Error, Result};
use crate::io::{read_file, read_text, write_atomic};
use crate::types::{organ_name, Modality, Volume};

#[derive(Debug, Serialize, Deserialize)]
struct VolumeMeta {
    id: String,
    dims: [usize; 3],
    dtype: String,
    modality: Modality,
    spacing: [f32; 3],
    class_names: Vec<(u8, String)>,
    /// False when `image.raw` holds scanner intensities that still need
    /// windowing / normalization.
    normalized: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    volumes: Vec<String>,
}

pub fn save_volume(dir: &Path, v: &Volume) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (d, h, w) = v.voxels.dim();
    let meta = VolumeMeta {
        id: v.id.clone(),
        dims: [d, h, w],
        dtype: "float32".into(),
        modality: v.modality,
        spacing: v.spacing,
        class_names: v
            .label_set()
            .into_iter()
            .map(|c| (c, organ_name(c).to_string()))
            .collect(),
        normalized: true,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    let mut image = Vec::with_capacity(4 * v.voxels.len());
    for x in v.voxels.iter() {
        image.extend_from_slice(&x.to_le_bytes());
    }
    let labels: Vec<u8> = v.labels.iter().copied().collect();
    write_atomic(&dir.join("image.raw"), &image)?;
    write_atomic(&dir.join("labels.raw"), &labels)?;
    write_atomic(&dir.join("volume.json"), json.as_bytes())
}

pub fn load_volume(dir: &Path) -> Result<Volume> {
    let meta_path = dir.join("volume.json");
    let meta: VolumeMeta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.dtype != "float32" {
        return Err(Error::format(&meta_path, format!("unsupported dtype {}", meta.dtype)));
    }
    let [d, h, w] = meta.dims;
    let n = d * h * w;
    let image_path = dir.join("image.raw");
    let bytes = read_file(&image_path)?;
    if bytes.len() != 4 * n {
        return Err(Error::format(
            &image_path,
            format!("expected {} bytes for {d}x{h}x{w}, found {}", 4 * n, bytes.len()),
        ));
    }
    let raw: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let labels_path = dir.join("labels.raw");
    let labels = read_file(&labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            &labels_path,
            format!("expected {n} bytes, found {}", labels.len()),
        ));
    }
    let raw = Array3::from_shape_vec((d, h, w), raw).expect("length checked");
    let labels = Array3::from_shape_vec((d, h, w), labels).expect("length checked");
    if meta.normalized {
        Volume::new(meta.id, raw, labels, meta.modality, meta.spacing)
    } else {
        ingest(meta.id, &raw, labels, meta.modality, meta.spacing)
    }
}

pub fn save_dataset(dir: &Path, volumes: &[Volume]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for v in volumes {
        save_volume(&dir.join(&v.id), v)?;
    }
    let meta = DatasetMeta {
        volumes: volumes.iter().map(|v| v.id.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_atomic(&dir.join("dataset.json"), json.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Volume>> {
    let path = dir.join("dataset.json");
    let meta: DatasetMeta = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    meta.volumes.iter().map(|id| load_volume(&dir.join(id))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        let vox = Array3::from_shape_fn((3, 4, 5), |(z, y, x)| ((z * 20 + y * 5 + x) as f32) / 60.0);
        let lab = Array3::from_shape_fn((3, 4, 5), |(z, y, _)| ((z + y) % 5) as u8);
        Volume::new("vol_007", vox, lab, Modality::Mr, [2.5, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let vols = vec![sample()];
        save_dataset(dir.path(), &vols).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), vols);
    }

    #[test]
    fn unnormalized_volumes_are_preprocessed() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample();
        save_volume(dir.path(), &v).unwrap();
        let meta_path = dir.path().join("volume.json");
        let text = std::fs::read_to_string(&meta_path).unwrap();
        std::fs::write(&meta_path, text.replace("\"normalized\": true", "\"normalized\": false")).unwrap();
        let back = load_volume(dir.path()).unwrap();
        assert_eq!(back.voxels[[0, 0, 0]], 0.0);
        assert_eq!(back.voxels[[2, 3, 4]], 1.0);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_volume(dir.path(), &sample()).unwrap();
        std::fs::write(dir.path().join("labels.raw"), [0u8; 3]).unwrap();
        assert!(matches!(load_volume(dir.path()), Err(Error::Format { .. })));
    }
}
