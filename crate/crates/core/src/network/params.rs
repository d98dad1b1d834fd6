use std::collections::HashMap;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with the given standard deviation.
    Normal(f64),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named, shaped parameter tensors stored flat in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
    index: HashMap<String, usize>,
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [rest @ .., last] => (rest.iter().product(), *last),
    }
}

impl<T: Real> ModelParams<T> {
    pub fn from_layout<R: Rng + ?Sized>(layout: &[ParamInfo], rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(layout.len());
        for info in layout {
            let v = match info.init {
                Init::Constant(c) => vec![T::of(c); info.len()],
                Init::Normal(std) => {
                    let n = Normal::new(0.0, std).expect("finite std");
                    (0..info.len()).map(|_| T::of(n.sample(rng))).collect()
                }
            };
            values.push(v);
        }
        Self::from_parts(
            layout.iter().map(|i| i.name.clone()).collect(),
            layout.iter().map(|i| i.shape.clone()).collect(),
            values,
        )
        .expect("layout sizes are consistent")
    }

    pub fn from_parts(names: Vec<String>, shapes: Vec<Vec<usize>>, values: Vec<Vec<T>>) -> Result<Self> {
        if names.len() != shapes.len() || names.len() != values.len() {
            return Err(Error::shape("parameter name/shape/value counts differ"));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, ((n, s), v)) in names.iter().zip(&shapes).zip(&values).enumerate() {
            if s.iter().product::<usize>() != v.len() {
                return Err(Error::shape(format!(
                    "parameter {n}: shape {s:?} holds {} values, got {}",
                    s.iter().product::<usize>(),
                    v.len()
                )));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::shape(format!("duplicate parameter name {n}")));
            }
        }
        Ok(ModelParams {
            names,
            shapes,
            values,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    /// View as a matrix whose columns are the last dimension.
    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, T> {
        ArrayView2::from_shape(matrix_dims(&self.shapes[id.0]), &self.values[id.0])
            .expect("shape matches length")
    }

    pub fn matrix_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        ArrayViewMut2::from_shape(matrix_dims(&self.shapes[id.0]), &mut self.values[id.0])
            .expect("shape matches length")
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.values[id.0][..])
    }

    pub fn scalar(&self, id: ParamId) -> T {
        self.values[id.0][0]
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|&x| U::of(x.as_f64())).collect())
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Applies `p -= lr · step` elementwise.
    pub fn apply_update(&mut self, step: &Gradients<T>, lr: T) {
        for (p, g) in self.values.iter_mut().zip(&step.values) {
            for (pv, &gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// Gradient buffers laid out like a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    values: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(p: &ModelParams<T>) -> Self {
        Gradients {
            values: p.values.iter().map(|v| vec![T::zero(); v.len()]).collect(),
        }
    }

    pub fn values(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn add(&mut self, id: ParamId, g: impl IntoIterator<Item = T>) {
        let dst = &mut self.values[id.0];
        let mut n = 0;
        for (d, v) in dst.iter_mut().zip(g) {
            *d += v;
            n += 1;
        }
        debug_assert_eq!(n, dst.len(), "gradient size mismatch");
    }

    pub fn add_scalar(&mut self, id: ParamId, g: T) {
        self.values[id.0][0] += g;
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// `self = momentum · self + g`.
    pub fn momentum_update(&mut self, g: &Gradients<T>, momentum: T) {
        for (a, b) in self.values.iter_mut().zip(&g.values) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = momentum * *x + y;
            }
        }
    }

    /// Global L2 norm over every buffer.
    pub fn norm(&self) -> T {
        self.values.iter().flatten().fold(T::zero(), |a, &v| a + v * v).sqrt()
    }

    pub fn scale(&mut self, s: T) {
        self.values.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn flat(&self) -> Vec<T> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}
