//! Single-map spatial correlation with a residual connection.
//!
//! For an input matrix `X` (`N` pixels × `C` channels):
//!
//! ```text
//! M   = (X·Wθ)(X·Wφ)ᵀ          N×N pairwise affinities
//! A   = softmax_rows(M)
//! out = (A·(X·Wg))·Wω + X
//! ```
//!
//! with `Wθ, Wφ, Wg: C×C'`, `Wω: C'×C` and `C' = C/2`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{as_matrix, to_map, FeatureMap, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCorrelationParams<T> {
    pub theta: Array2<T>,
    pub phi: Array2<T>,
    pub g: Array2<T>,
    pub omega: Array2<T>,
}

impl<T: Real> SpatialCorrelationParams<T> {
    pub fn new(theta: Array2<T>, phi: Array2<T>, g: Array2<T>, omega: Array2<T>) -> Result<Self> {
        let c = theta.nrows();
        check_channels(c)?;
        let cp = c / 2;
        for (name, m, want) in [
            ("theta", &theta, (c, cp)),
            ("phi", &phi, (c, cp)),
            ("g", &g, (c, cp)),
            ("omega", &omega, (cp, c)),
        ] {
            if m.dim() != want {
                return Err(Error::shape(format!(
                    "{name} is {:?}, expected {want:?}",
                    m.dim()
                )));
            }
        }
        Ok(SpatialCorrelationParams {
            theta,
            phi,
            g,
            omega,
        })
    }

    pub fn zeros(channels: usize) -> Result<Self> {
        check_channels(channels)?;
        let cp = channels / 2;
        Ok(SpatialCorrelationParams {
            theta: Array2::zeros((channels, cp)),
            phi: Array2::zeros((channels, cp)),
            g: Array2::zeros((channels, cp)),
            omega: Array2::zeros((cp, channels)),
        })
    }

    /// Gaussian init with standard deviation `scale / sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(channels: usize, scale: f64, rng: &mut R) -> Result<Self> {
        check_channels(channels)?;
        let cp = channels / 2;
        let mut draw = |rows: usize, cols: usize| {
            let n = Normal::new(0.0, scale / (rows as f64).sqrt()).expect("finite std");
            Array2::from_shape_simple_fn((rows, cols), || T::of(n.sample(rng)))
        };
        Ok(SpatialCorrelationParams {
            theta: draw(channels, cp),
            phi: draw(channels, cp),
            g: draw(channels, cp),
            omega: draw(cp, channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.theta.nrows()
    }

    pub fn reduced_channels(&self) -> usize {
        self.theta.ncols()
    }
}

fn check_channels(c: usize) -> Result<()> {
    if c == 0 || !c.is_multiple_of(2) {
        return Err(Error::config(format!(
            "spatial correlation needs a positive even channel count, got {c}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCorrelationGrads<T> {
    pub theta: Array2<T>,
    pub phi: Array2<T>,
    pub g: Array2<T>,
    pub omega: Array2<T>,
}

impl<T: Real> SpatialCorrelationGrads<T> {
    pub fn zeros_like(p: &SpatialCorrelationParams<T>) -> Self {
        SpatialCorrelationGrads {
            theta: Array2::zeros(p.theta.dim()),
            phi: Array2::zeros(p.phi.dim()),
            g: Array2::zeros(p.g.dim()),
            omega: Array2::zeros(p.omega.dim()),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        self.theta += &o.theta;
        self.phi += &o.phi;
        self.g += &o.g;
        self.omega += &o.omega;
    }
}

/// Everything the backward pass needs from one forward.
pub struct ScCache<T> {
    x: Array2<T>,
    theta_x: Array2<T>,
    phi_x: Array2<T>,
    g_x: Array2<T>,
    attention: Array2<T>,
    mixed: Array2<T>,
}

impl<T: Real> ScCache<T> {
    /// Row-softmax-normalized correlation matrix (`N×N`).
    pub fn attention(&self) -> &Array2<T> {
        &self.attention
    }
}

/// Stable in-place row softmax.
pub fn softmax_rows<T: Real>(m: &mut Array2<T>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        let inv = T::one() / sum;
        row.mapv_inplace(|v| v * inv);
    }
}

/// Forward on an `N×C` matrix.
pub fn sc_forward<T: Real>(
    x: ArrayView2<'_, T>,
    p: &SpatialCorrelationParams<T>,
) -> (Array2<T>, ScCache<T>) {
    let theta_x = x.dot(&p.theta);
    let phi_x = x.dot(&p.phi);
    let g_x = x.dot(&p.g);
    let mut attention = theta_x.dot(&phi_x.t());
    softmax_rows(&mut attention);
    let mixed = attention.dot(&g_x);
    let mut out = mixed.dot(&p.omega);
    out += &x;
    (
        out,
        ScCache {
            x: x.to_owned(),
            theta_x,
            phi_x,
            g_x,
            attention,
            mixed,
        },
    )
}

/// Backward on an `N×C` matrix: returns `dX` and accumulates parameter
/// gradients into `grads`.
pub fn sc_backward<T: Real>(
    cache: &ScCache<T>,
    p: &SpatialCorrelationParams<T>,
    dout: ArrayView2<'_, T>,
    grads: &mut SpatialCorrelationGrads<T>,
) -> Array2<T> {
    grads.omega += &cache.mixed.t().dot(&dout);
    let dmixed = dout.dot(&p.omega.t());
    let dattn = dmixed.dot(&cache.g_x.t());
    let dg_x = cache.attention.t().dot(&dmixed);

    // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A))
    let mut dscore = dattn;
    for (mut drow, arow) in dscore
        .axis_iter_mut(Axis(0))
        .zip(cache.attention.axis_iter(Axis(0)))
    {
        let dot: T = drow.iter().zip(arow.iter()).map(|(&d, &a)| d * a).sum();
        ndarray::Zip::from(&mut drow)
            .and(&arow)
            .for_each(|d, &a| *d = a * (*d - dot));
    }
    let dtheta_x = dscore.dot(&cache.phi_x);
    let dphi_x = dscore.t().dot(&cache.theta_x);

    let xt = cache.x.t();
    grads.theta += &xt.dot(&dtheta_x);
    grads.phi += &xt.dot(&dphi_x);
    grads.g += &xt.dot(&dg_x);

    let mut dx = dout.to_owned();
    dx += &dtheta_x.dot(&p.theta.t());
    dx += &dphi_x.dot(&p.phi.t());
    dx += &dg_x.dot(&p.g.t());
    dx
}

fn check_input<T: Real>(f_in: &FeatureMap<T>, p: &SpatialCorrelationParams<T>) -> Result<()> {
    if f_in.channels() != p.channels() {
        return Err(Error::shape(format!(
            "input has {} channels, parameters expect {}",
            f_in.channels(),
            p.channels()
        )));
    }
    Ok(())
}

/// Full-map spatial correlation with residual; output shape equals input shape.
pub fn spatial_correlation<T: Real>(
    f_in: &FeatureMap<T>,
    params: &SpatialCorrelationParams<T>,
) -> Result<FeatureMap<T>> {
    spatial_correlation_with_attention(f_in, params).map(|(out, _)| out)
}

/// Like [`spatial_correlation`], also returning the cache whose
/// [`ScCache::attention`] exposes the normalized correlation matrix.
pub fn spatial_correlation_with_attention<T: Real>(
    f_in: &FeatureMap<T>,
    params: &SpatialCorrelationParams<T>,
) -> Result<(FeatureMap<T>, ScCache<T>)> {
    check_input(f_in, params)?;
    let (h, w, _) = f_in.dim();
    let (out, cache) = sc_forward(as_matrix(&f_in.data), params);
    Ok((
        FeatureMap {
            data: to_map(out, h, w),
            scale_index: f_in.scale_index,
        },
        cache,
    ))
}
