//! Efficient global correlation between a query and a support feature map.
//!
//! ```text
//! f_c   = [f_s; f_q]                              (C_s + C_q channels)
//! L     = merge(SC_long(group) for each strided group of f_c)
//! A     = L·α                                     (C_q channels)
//! S     = merge(SC_short(block) for each contiguous block of A)
//! f̂_q  = f_q + S
//! ```
//!
//! Two hops (long then short) connect every input pixel to every output
//! pixel while each attention only spans one group or block.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::partition::{crop, gather_rows, pad, scatter_rows, PartitionSpec};
use super::spatial::{
    sc_backward, sc_forward, ScCache, SpatialCorrelationGrads, SpatialCorrelationParams,
};
use crate::error::{Error, Result};
use crate::layers::{concat_channels, split_channels};
use crate::tensor::{as_matrix, check_same_hw, to_map, FeatureMap, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct GcParams<T> {
    /// Spatial correlation inside long-range groups, over `C_s + C_q` channels.
    pub long: SpatialCorrelationParams<T>,
    /// Channel squeeze `(C_s + C_q) × C_q`.
    pub alpha: Array2<T>,
    /// Spatial correlation inside short-range blocks, over `C_q` channels.
    pub short: SpatialCorrelationParams<T>,
}

impl<T: Real> GcParams<T> {
    pub fn zeros(c_q: usize, c_s: usize) -> Result<Self> {
        Ok(GcParams {
            long: SpatialCorrelationParams::zeros(c_q + c_s)?,
            alpha: Array2::zeros((c_q + c_s, c_q)),
            short: SpatialCorrelationParams::zeros(c_q)?,
        })
    }

    pub fn random<R: Rng + ?Sized>(c_q: usize, c_s: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let long = SpatialCorrelationParams::random(c_q + c_s, scale, rng)?;
        let n = Normal::new(0.0, scale / ((c_q + c_s) as f64).sqrt()).expect("finite std");
        let alpha = Array2::from_shape_simple_fn((c_q + c_s, c_q), || T::of(n.sample(rng)));
        let short = SpatialCorrelationParams::random(c_q, scale, rng)?;
        Ok(GcParams { long, alpha, short })
    }

    pub fn query_channels(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn support_channels(&self) -> usize {
        self.alpha.nrows() - self.alpha.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcGrads<T> {
    pub long: SpatialCorrelationGrads<T>,
    pub alpha: Array2<T>,
    pub short: SpatialCorrelationGrads<T>,
}

impl<T: Real> GcGrads<T> {
    pub fn zeros_like(p: &GcParams<T>) -> Self {
        GcGrads {
            long: SpatialCorrelationGrads::zeros_like(&p.long),
            alpha: Array2::zeros(p.alpha.dim()),
            short: SpatialCorrelationGrads::zeros_like(&p.short),
        }
    }
}

/// Which correlation stages run. `Full` is the module used by the network;
/// the single-stage forms exist for reachability analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcStages {
    Full,
    LongOnly,
}

pub struct GcCache<T> {
    spec: PartitionSpec,
    stages: GcStages,
    c_s: usize,
    long_groups: Vec<Vec<usize>>,
    short_blocks: Vec<Vec<usize>>,
    valid: Vec<bool>,
    long_caches: Vec<ScCache<T>>,
    /// Long-stage output with padded rows zeroed (input of α).
    long_out: Array2<T>,
    short_caches: Vec<ScCache<T>>,
}

fn zero_invalid_rows<T: Real>(m: &mut Array2<T>, valid: &[bool]) {
    for (mut row, &ok) in m.rows_mut().into_iter().zip(valid) {
        if !ok {
            row.fill(T::zero());
        }
    }
}

/// Runs one spatial correlation per group of `m` and merges the results.
fn grouped_forward<T: Real>(
    m: &Array2<T>,
    groups: &[Vec<usize>],
    p: &SpatialCorrelationParams<T>,
) -> (Array2<T>, Vec<ScCache<T>>) {
    let mut out = Array2::zeros(m.dim());
    let mut caches = Vec::with_capacity(groups.len());
    for g in groups {
        let x = gather_rows(m.view(), g);
        let (y, cache) = sc_forward(x.view(), p);
        scatter_rows(&mut out, g, y.view());
        caches.push(cache);
    }
    (out, caches)
}

fn grouped_backward<T: Real>(
    dout: &Array2<T>,
    groups: &[Vec<usize>],
    caches: &[ScCache<T>],
    p: &SpatialCorrelationParams<T>,
    grads: &mut SpatialCorrelationGrads<T>,
) -> Array2<T> {
    let mut dx = Array2::zeros(dout.dim());
    for (g, cache) in groups.iter().zip(caches) {
        let d = gather_rows(dout.view(), g);
        let dxg = sc_backward(cache, p, d.view(), grads);
        scatter_rows(&mut dx, g, dxg.view());
    }
    dx
}

pub fn gc_forward<T: Real>(
    f_q: &Array3<T>,
    f_s: &Array3<T>,
    spec: &PartitionSpec,
    params: &GcParams<T>,
    stages: GcStages,
) -> Result<(Array3<T>, GcCache<T>)> {
    check_same_hw(f_q, f_s, "efficient GC")?;
    let (h, w, c_q) = f_q.dim();
    let c_s = f_s.dim().2;
    if (h, w) != (spec.height, spec.width) {
        return Err(Error::shape(format!(
            "partition built for {}x{}, features are {h}x{w}",
            spec.height, spec.width
        )));
    }
    if params.query_channels() != c_q || params.support_channels() != c_s {
        return Err(Error::shape(format!(
            "GC parameters expect C_q={} C_s={}, got C_q={c_q} C_s={c_s}",
            params.query_channels(),
            params.support_channels()
        )));
    }
    let (hp, wp) = (spec.padded_height(), spec.padded_width());
    let valid = spec.valid_mask();
    let long_groups = spec.long_groups();
    let short_blocks = spec.short_blocks();

    let f_c = pad(&concat_channels(f_s, f_q), spec);
    let (mut long_out, long_caches) =
        grouped_forward(&as_matrix(&f_c).to_owned(), &long_groups, &params.long);
    zero_invalid_rows(&mut long_out, &valid);
    let squeezed = long_out.dot(&params.alpha);

    let (update, short_caches) = match stages {
        GcStages::Full => grouped_forward(&squeezed, &short_blocks, &params.short),
        GcStages::LongOnly => (squeezed, Vec::new()),
    };
    let mut out = crop(&to_map(update, hp, wp), spec);
    out += f_q;
    Ok((
        out,
        GcCache {
            spec: *spec,
            stages,
            c_s,
            long_groups,
            short_blocks,
            valid,
            long_caches,
            long_out,
            short_caches,
        },
    ))
}

/// Returns `(df_q, df_s, grads)`.
pub fn gc_backward<T: Real>(
    cache: &GcCache<T>,
    params: &GcParams<T>,
    dout: &Array3<T>,
) -> (Array3<T>, Array3<T>, GcGrads<T>) {
    let spec = &cache.spec;
    let mut grads = GcGrads::zeros_like(params);
    let dupdate = as_matrix(&pad(dout, spec)).to_owned();
    let dsqueezed = match cache.stages {
        GcStages::Full => grouped_backward(
            &dupdate,
            &cache.short_blocks,
            &cache.short_caches,
            &params.short,
            &mut grads.short,
        ),
        GcStages::LongOnly => dupdate,
    };
    grads.alpha = cache.long_out.t().dot(&dsqueezed);
    let mut dlong = dsqueezed.dot(&params.alpha.t());
    zero_invalid_rows(&mut dlong, &cache.valid);
    let df_c = grouped_backward(
        &dlong,
        &cache.long_groups,
        &cache.long_caches,
        &params.long,
        &mut grads.long,
    );
    let df_c = crop(
        &to_map(df_c, spec.padded_height(), spec.padded_width()),
        spec,
    );
    let (df_s, df_q_corr) = split_channels(&df_c, cache.c_s);
    let df_q = dout + &df_q_corr;
    (df_q, df_s, grads)
}

/// `f̂_q = f_q + ShortSC(α(LongSC([f_s; f_q])))`; output shape equals `f_q`.
pub fn efficient_gc<T: Real>(
    f_q: &FeatureMap<T>,
    f_s: &FeatureMap<T>,
    spec: &PartitionSpec,
    params: &GcParams<T>,
) -> Result<FeatureMap<T>> {
    efficient_gc_staged(f_q, f_s, spec, params, GcStages::Full)
}

pub fn efficient_gc_staged<T: Real>(
    f_q: &FeatureMap<T>,
    f_s: &FeatureMap<T>,
    spec: &PartitionSpec,
    params: &GcParams<T>,
    stages: GcStages,
) -> Result<FeatureMap<T>> {
    let (out, _) = gc_forward(&f_q.data, &f_s.data, spec, params, stages)?;
    FeatureMap::new(out, f_q.scale_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{central_difference, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand3(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zeroed_weights_reduce_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f_q = FeatureMap::new(rand3(&mut rng, (5, 6, 4)), 1).unwrap();
        let f_s = FeatureMap::new(rand3(&mut rng, (5, 6, 2)), 1).unwrap();
        let spec = PartitionSpec::new(5, 6, 2, 2).unwrap();
        let mut p = GcParams::random(4, 2, 1.0, &mut rng).unwrap();
        p.long.omega.fill(0.0);
        p.short.omega.fill(0.0);
        p.alpha.fill(0.0);
        let out = efficient_gc(&f_q, &f_s, &spec, &p).unwrap();
        assert_eq!(out.data, f_q.data);
    }

    #[test]
    fn mismatched_spatial_dims_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f_q = FeatureMap::new(rand3(&mut rng, (4, 4, 2)), 0).unwrap();
        let f_s = FeatureMap::new(rand3(&mut rng, (4, 5, 2)), 0).unwrap();
        let spec = PartitionSpec::new(4, 4, 2, 2).unwrap();
        let p = GcParams::zeros(2, 2).unwrap();
        assert!(matches!(
            efficient_gc(&f_q, &f_s, &spec, &p),
            Err(Error::Shape(_))
        ));
    }

    fn check_grads(h: usize, w: usize, p_h: usize, p_w: usize, stages: GcStages, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cq, cs) = (4, 2);
        let f_q = rand3(&mut rng, (h, w, cq));
        let f_s = rand3(&mut rng, (h, w, cs));
        let spec = PartitionSpec::new(h, w, p_h, p_w).unwrap();
        let p = GcParams::random(cq, cs, 1.5, &mut rng).unwrap();
        let proj = rand3(&mut rng, (h, w, cq));
        let loss = |fq: &Array3<f64>, fs: &Array3<f64>, p: &GcParams<f64>| {
            (&gc_forward(fq, fs, &spec, p, stages).unwrap().0 * &proj).sum()
        };
        let (_, cache) = gc_forward(&f_q, &f_s, &spec, &p, stages).unwrap();
        let (dq, ds, g) = gc_backward(&cache, &p, &proj);

        let num = central_difference(
            |v| loss(&Array3::from_shape_vec(f_q.dim(), v.to_vec()).unwrap(), &f_s, &p),
            f_q.as_slice().unwrap(),
            1e-5,
        );
        assert!(max_relative_error(dq.as_slice().unwrap(), &num, 1e-7) < 1e-4);
        let num = central_difference(
            |v| loss(&f_q, &Array3::from_shape_vec(f_s.dim(), v.to_vec()).unwrap(), &p),
            f_s.as_slice().unwrap(),
            1e-5,
        );
        assert!(max_relative_error(ds.as_slice().unwrap(), &num, 1e-7) < 1e-4);

        let num = central_difference(
            |v| {
                let mut q = p.clone();
                q.alpha.as_slice_mut().unwrap().copy_from_slice(v);
                loss(&f_q, &f_s, &q)
            },
            p.alpha.as_slice().unwrap(),
            1e-5,
        );
        assert!(max_relative_error(g.alpha.as_slice().unwrap(), &num, 1e-7) < 1e-4);
        let num = central_difference(
            |v| {
                let mut q = p.clone();
                q.long.theta.as_slice_mut().unwrap().copy_from_slice(v);
                loss(&f_q, &f_s, &q)
            },
            p.long.theta.as_slice().unwrap(),
            1e-5,
        );
        assert!(max_relative_error(g.long.theta.as_slice().unwrap(), &num, 1e-7) < 1e-4);
        if stages == GcStages::Full {
            let num = central_difference(
                |v| {
                    let mut q = p.clone();
                    q.short.phi.as_slice_mut().unwrap().copy_from_slice(v);
                    loss(&f_q, &f_s, &q)
                },
                p.short.phi.as_slice().unwrap(),
                1e-5,
            );
            assert!(max_relative_error(g.short.phi.as_slice().unwrap(), &num, 1e-7) < 1e-4);
        }
    }

    #[test]
    fn gradients_divisible() {
        check_grads(4, 4, 2, 2, GcStages::Full, 12);
    }

    #[test]
    fn gradients_padded() {
        check_grads(5, 3, 2, 2, GcStages::Full, 13);
    }

    #[test]
    fn gradients_long_only() {
        check_grads(4, 4, 2, 2, GcStages::LongOnly, 14);
    }
}
