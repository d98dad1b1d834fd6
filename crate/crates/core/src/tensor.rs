//! Dense `H×W×C` feature maps and small matrix helpers.
//!
//! Maps are stored pixel-major with channels contiguous, so a map viewed as
//! an `(H·W)×C` matrix is free and 1×1 convolutions are plain matrix
//! products.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, NdFloat};

use crate::error::{Error, Result};

/// Floating-point element type for every differentiable operation.
/// `f64` is used for gradient checks, `f32` for training.
pub trait Real: NdFloat + Default + std::iter::Sum {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A dense `H×W×C` activation tensor tagged with the scale it lives at.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub data: Array3<T>,
    pub scale_index: usize,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(data: Array3<T>, scale_index: usize) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!(
                "feature map dims must be positive, got {h}x{w}x{c}"
            )));
        }
        Ok(FeatureMap {
            data: standard(data),
            scale_index,
        })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        FeatureMap {
            data: Array3::zeros((h, w, c)),
            scale_index: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// The map as an `(H·W)×C` matrix, rows in raster order.
    pub fn as_matrix(&self) -> ArrayView2<'_, T> {
        as_matrix(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Returns `a` in standard (C-contiguous) layout.
pub fn standard<T: Clone, D: ndarray::Dimension>(a: ndarray::Array<T, D>) -> ndarray::Array<T, D> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub fn as_matrix<T>(a: &Array3<T>) -> ArrayView2<'_, T> {
    let (h, w, c) = a.dim();
    a.view()
        .into_shape_with_order((h * w, c))
        .expect("feature maps are kept in standard layout")
}

pub fn view_matrix<'a, T>(a: ArrayView3<'a, T>) -> ArrayView2<'a, T> {
    let (h, w, c) = a.dim();
    a.into_shape_with_order((h * w, c))
        .expect("feature maps are kept in standard layout")
}

pub fn to_map<T: Clone>(m: Array2<T>, h: usize, w: usize) -> Array3<T> {
    let c = m.ncols();
    standard(m)
        .into_shape_with_order((h, w, c))
        .expect("row count equals h*w")
}

pub fn check_same_hw<T>(a: &Array3<T>, b: &Array3<T>, what: &str) -> Result<()> {
    let (ha, wa, _) = a.dim();
    let (hb, wb, _) = b.dim();
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(format!(
            "{what}: spatial dims {ha}x{wa} vs {hb}x{wb}"
        )));
    }
    Ok(())
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Converts between element types through `f64`.
pub fn cast_array<A: Real, B: Real, D: ndarray::Dimension>(
    a: &ndarray::Array<A, D>,
) -> ndarray::Array<B, D> {
    a.mapv(|v| B::of(v.as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_view_is_raster_order() {
        let a = Array3::from_shape_fn((2, 3, 2), |(y, x, c)| (y * 100 + x * 10 + c) as f64);
        let m = as_matrix(&a);
        assert_eq!(m.dim(), (6, 2));
        assert_eq!(m[[4, 1]], 111.0);
        let back = to_map(m.to_owned(), 2, 3);
        assert_eq!(back, a);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((sigmoid(800.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn feature_map_rejects_empty() {
        assert!(FeatureMap::<f64>::new(Array3::zeros((0, 2, 2)), 0).is_err());
    }
}
