//! Long-range (strided) and short-range (blocked) pixel partitions.
//!
//! A map of `H×W` is zero-padded to `(P_h·Q_h)×(P_w·Q_w)` with
//! `Q = ceil(H/P)`. Long-range group `(a, b)` collects the pixels
//! `(a + k·Q_h, b + l·Q_w)` for `k < P_h, l < P_w`, i.e. pixels a fixed step
//! apart; short-range block `(k, l)` is the contiguous `Q_h×Q_w` tile at
//! `(k·Q_h, l·Q_w)`. Each long-range group meets each short-range block in
//! exactly one pixel.

use ndarray::{s, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    pub height: usize,
    pub width: usize,
    pub p_h: usize,
    pub p_w: usize,
    pub q_h: usize,
    pub q_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl PartitionSpec {
    pub fn new(height: usize, width: usize, p_h: usize, p_w: usize) -> Result<Self> {
        if height == 0 || width == 0 || p_h == 0 || p_w == 0 {
            return Err(Error::config(format!(
                "partition needs positive sizes, got {height}x{width} with P={p_h}x{p_w}"
            )));
        }
        let q_h = height.div_ceil(p_h);
        let q_w = width.div_ceil(p_w);
        Ok(PartitionSpec {
            height,
            width,
            p_h,
            p_w,
            q_h,
            q_w,
            pad_h: p_h * q_h - height,
            pad_w: p_w * q_w - width,
        })
    }

    pub fn padded_height(&self) -> usize {
        self.height + self.pad_h
    }

    pub fn padded_width(&self) -> usize {
        self.width + self.pad_w
    }

    pub fn padded_len(&self) -> usize {
        self.padded_height() * self.padded_width()
    }

    pub fn n_long_groups(&self) -> usize {
        self.q_h * self.q_w
    }

    pub fn n_short_blocks(&self) -> usize {
        self.p_h * self.p_w
    }

    /// Padded raster indices of each long-range group, groups ordered by
    /// `(a, b)` and members by `(k, l)`.
    pub fn long_groups(&self) -> Vec<Vec<usize>> {
        let wp = self.padded_width();
        let mut out = Vec::with_capacity(self.n_long_groups());
        for a in 0..self.q_h {
            for b in 0..self.q_w {
                let mut g = Vec::with_capacity(self.p_h * self.p_w);
                for k in 0..self.p_h {
                    for l in 0..self.p_w {
                        g.push((a + k * self.q_h) * wp + b + l * self.q_w);
                    }
                }
                out.push(g);
            }
        }
        out
    }

    /// Padded raster indices of each short-range block, blocks ordered by
    /// `(k, l)` and members in raster order inside the block.
    pub fn short_blocks(&self) -> Vec<Vec<usize>> {
        let wp = self.padded_width();
        let mut out = Vec::with_capacity(self.n_short_blocks());
        for k in 0..self.p_h {
            for l in 0..self.p_w {
                let mut g = Vec::with_capacity(self.q_h * self.q_w);
                for i in 0..self.q_h {
                    for j in 0..self.q_w {
                        g.push((k * self.q_h + i) * wp + l * self.q_w + j);
                    }
                }
                out.push(g);
            }
        }
        out
    }

    /// Whether each padded raster index lies inside the original map.
    pub fn valid_mask(&self) -> Vec<bool> {
        let wp = self.padded_width();
        (0..self.padded_len())
            .map(|i| i / wp < self.height && i % wp < self.width)
            .collect()
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "partition built for {}x{}, map is {h}x{w}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Zero-pads `x` at the bottom/right to the partition's padded size.
pub fn pad<T: Real>(x: &Array3<T>, spec: &PartitionSpec) -> Array3<T> {
    let (h, w, c) = x.dim();
    if spec.pad_h == 0 && spec.pad_w == 0 {
        return x.clone();
    }
    let mut out = Array3::zeros((spec.padded_height(), spec.padded_width(), c));
    out.slice_mut(s![..h, ..w, ..]).assign(x);
    out
}

pub fn crop<T: Real>(x: &Array3<T>, spec: &PartitionSpec) -> Array3<T> {
    if spec.pad_h == 0 && spec.pad_w == 0 {
        return x.clone();
    }
    x.slice(s![..spec.height, ..spec.width, ..]).to_owned()
}

/// Copies the listed rows of `m` into a new matrix.
pub fn gather_rows<T: Real>(m: ArrayView2<'_, T>, idx: &[usize]) -> Array2<T> {
    let c = m.ncols();
    let mut out = Array2::zeros((idx.len(), c));
    for (mut dst, &i) in out.rows_mut().into_iter().zip(idx) {
        dst.assign(&m.row(i));
    }
    out
}

/// Writes the rows of `src` into `m` at the listed positions.
pub fn scatter_rows<T: Real>(m: &mut Array2<T>, idx: &[usize], src: ArrayView2<'_, T>) {
    for (row, &i) in src.rows().into_iter().zip(idx) {
        m.row_mut(i).assign(&row);
    }
}

fn rearrange<T: Real>(
    f: &FeatureMap<T>,
    spec: &PartitionSpec,
    groups: Vec<Vec<usize>>,
    group_hw: (usize, usize),
) -> Result<Vec<FeatureMap<T>>> {
    let (h, w, c) = f.dim();
    spec.check(h, w)?;
    let padded = pad(&f.data, spec);
    let m = crate::tensor::as_matrix(&padded);
    groups
        .iter()
        .map(|g| {
            let rows = gather_rows(m, g);
            FeatureMap::new(
                crate::tensor::to_map(rows, group_hw.0, group_hw.1),
                f.scale_index,
            )
        })
        .collect::<Result<Vec<_>>>()
        .inspect(|v| {
            debug_assert!(v.iter().all(|g| g.channels() == c));
        })
}

fn merge<T: Real>(
    parts: &[FeatureMap<T>],
    spec: &PartitionSpec,
    groups: Vec<Vec<usize>>,
    group_hw: (usize, usize),
) -> Result<FeatureMap<T>> {
    if parts.len() != groups.len() {
        return Err(Error::shape(format!(
            "expected {} groups, got {}",
            groups.len(),
            parts.len()
        )));
    }
    let c = parts.first().map(|p| p.channels()).unwrap_or(0);
    let mut m = Array2::zeros((spec.padded_len(), c));
    for (part, g) in parts.iter().zip(&groups) {
        let (gh, gw, gc) = part.dim();
        if (gh, gw) != group_hw || gc != c {
            return Err(Error::shape(format!(
                "group is {gh}x{gw}x{gc}, expected {}x{}x{c}",
                group_hw.0, group_hw.1
            )));
        }
        scatter_rows(&mut m, g, part.as_matrix());
    }
    let padded = crate::tensor::to_map(m, spec.padded_height(), spec.padded_width());
    FeatureMap::new(crop(&padded, spec), parts[0].scale_index)
}

/// Splits `f` into `Q_h·Q_w` strided groups, each a `P_h×P_w` map.
pub fn long_range_rearrange<T: Real>(
    f: &FeatureMap<T>,
    spec: &PartitionSpec,
) -> Result<Vec<FeatureMap<T>>> {
    rearrange(f, spec, spec.long_groups(), (spec.p_h, spec.p_w))
}

/// Inverse of [`long_range_rearrange`]; padding is stripped.
pub fn long_range_merge<T: Real>(
    groups: &[FeatureMap<T>],
    spec: &PartitionSpec,
) -> Result<FeatureMap<T>> {
    merge(groups, spec, spec.long_groups(), (spec.p_h, spec.p_w))
}

/// Splits `f` into `P_h·P_w` contiguous `Q_h×Q_w` blocks.
pub fn short_range_rearrange<T: Real>(
    f: &FeatureMap<T>,
    spec: &PartitionSpec,
) -> Result<Vec<FeatureMap<T>>> {
    rearrange(f, spec, spec.short_blocks(), (spec.q_h, spec.q_w))
}

/// Inverse of [`short_range_rearrange`]; padding is stripped.
pub fn short_range_merge<T: Real>(
    blocks: &[FeatureMap<T>],
    spec: &PartitionSpec,
) -> Result<FeatureMap<T>> {
    merge(blocks, spec, spec.short_blocks(), (spec.q_h, spec.q_w))
}
